import pytest

import subshift_forge as sf
from subshift_forge._core.errors import (
    CapacityError,
    ConfigError,
    ConstructionFailedError,
    InvalidArgumentError,
    ScheduleError,
    SequenceParseError,
    VerificationError,
)


def test_package_has_version():
    assert sf.__version__ is not None


@pytest.mark.parametrize(
    "error",
    [InvalidArgumentError, SequenceParseError, CapacityError, ConfigError, ScheduleError],
    ids=lambda e: e.__name__,
)
def test_argument_errors_are_value_errors(error):
    assert issubclass(error, ValueError)


def test_error_payloads():
    err = ScheduleError("K_7=3 does not exceed K_6=3", "K_m strictly increasing")
    assert err.constraint == "K_m strictly increasing"
    assert "K_m strictly increasing" in str(err)

    err = SequenceParseError("not a real number: 'x'", 4)
    assert err.line == 4
    assert str(err).startswith("line 4")

    err = ConstructionFailedError("nothing passed", level=2, worst=0.9, draws=100)
    assert (err.level, err.worst, err.draws) == (2, 0.9, 100)
    assert isinstance(err, RuntimeError)
    assert issubclass(VerificationError, AssertionError)


def test_public_filters():
    assert {"CorrelationFilter", "BernsteinFilter", "EmptyFilter"} <= set(sf.filters.__all__)
