"""
Test cases for the error hierarchy
"""

import os
import pickle
import sys

import pytest

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.exceptions import (
    ConfigError,
    DimensionMismatch,
    EmptyHistory,
    IncompatibleRuns,
    IncompleteLog,
    InvalidDelta,
    InvalidFamily,
    InvalidModel,
    LabError,
    MetaTrainingAborted,
    OutputError,
    SingularKPsi
)
from src.meta_learner import MetaRunRecord


ERRORS = [
    LabError("plain failure", {'key': 1}),
    InvalidModel("row sums to 1.2", state=1, action=0),
    SingularKPsi(1e-14, 1e-10),
    InvalidFamily("kappa must be positive"),
    DimensionMismatch("phi", (4,), (3,)),
    InvalidDelta(1.5),
    EmptyHistory(0, 0),
    IncompleteLog("log_det", "empty feature log"),
    ConfigError("algorithm.delta", "must lie in (0, 1)", ValueError("bad")),
    IncompatibleRuns("seed lists differ", ["outputs/a", "outputs/b"]),
    OutputError("csv", "outputs/run/bounds.csv", OSError("disk full")),
    MetaTrainingAborted("test", 3, MetaRunRecord(estimator='zero', lambda_mode='fixed'), InvalidDelta(2.0))
]


class TestPickling:
    """Test cases for sending errors across process boundaries"""

    @pytest.mark.parametrize("error", ERRORS, ids=lambda e: type(e).__name__)
    def test_round_trip(self, error):
        """Test every error unpickles to the same type, message and fields"""
        restored = pickle.loads(pickle.dumps(error))
        assert type(restored) is type(error)
        assert str(restored) == str(error)
        assert restored.message == error.message
        for name in error.init_fields:
            assert type(getattr(restored, name)) is type(getattr(error, name))

    def test_fields_survive(self):
        """Test structured fields are rebuilt, not just the message"""
        restored = pickle.loads(pickle.dumps(DimensionMismatch("psi", (4,), (2,))))
        assert restored.what == "psi"
        assert restored.expected == (4,)
        assert restored.details['actual'] == "(2,)"

    def test_nested_original_error(self):
        """Test the cause of an aborted meta-training run is rebuilt too"""
        error = MetaTrainingAborted("training", 1, None, InvalidDelta(0.0))
        restored = pickle.loads(pickle.dumps(error))
        assert isinstance(restored.original_error, InvalidDelta)
        assert restored.original_error.delta == 0.0
        assert restored.task_index == 1


if __name__ == "__main__":
    pytest.main([__file__])
