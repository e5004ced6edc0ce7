"""
Utility functions for the matrix RL lab
"""
import hashlib
from pathlib import Path
from typing import Iterable, Sequence, Tuple, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

# spawn-key prefixes used by derive_seed_sequence
PHASE_CORE = 0
PHASE_TRAIN = 1
PHASE_TEST = 2
PHASE_ESTIMATE = 3

# floor on variance estimates feeding lambda = 1/(T Var)
VAR_FLOOR = 1e-6


def derive_seed_sequence(master_seed: int, *keys: int) -> np.random.SeedSequence:
    """
    Derive an independent child stream from a master seed and integer keys

    The child is a pure function of (master_seed, keys): streams for task 7
    are the same whether 8 or 80 tasks are run.

    Args:
        master_seed: Non-negative master seed
        keys: Path of non-negative integers identifying the stream

    Returns:
        np.random.SeedSequence: Seed sequence for the stream
    """
    if master_seed < 0 or any(k < 0 for k in keys):
        raise ValueError(f"seeds and keys must be non-negative, got {master_seed}, {keys}")
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(k) for k in keys))


def child_sequence(sequence: np.random.SeedSequence, *keys: int) -> np.random.SeedSequence:
    """
    Extend a seed sequence's spawn key

    Args:
        sequence: Parent sequence
        keys: Additional key path

    Returns:
        np.random.SeedSequence: Child sequence
    """
    return np.random.SeedSequence(
        entropy=sequence.entropy,
        spawn_key=tuple(sequence.spawn_key) + tuple(int(k) for k in keys),
        pool_size=sequence.pool_size
    )


def episode_generator(seed: SeedLike, episode: int) -> np.random.Generator:
    """
    Random source for one episode

    A Generator is shared across episodes; an int or SeedSequence is split
    into one stream per episode so that longer runs do not perturb shorter ones.

    Args:
        seed: Task-level seed source
        episode: Zero-based episode index

    Returns:
        np.random.Generator: Generator for the episode
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.default_rng(child_sequence(seed, episode))


def frobenius_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Frobenius norm of a - b"""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b), ord='fro'))


def mean_and_stderr(values: Iterable[float]) -> Tuple[float, float]:
    """
    Arithmetic mean and its standard error

    Args:
        values: Sample values (at least one)

    Returns:
        Tuple[float, float]: mean, standard error (0 for a single value)
    """
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        raise ValueError("mean_and_stderr needs at least one value")
    mean = float(np.mean(arr))
    if arr.size == 1:
        return mean, 0.0
    return mean, float(np.std(arr, ddof=1) / np.sqrt(arr.size))


def sign_vectors(n: int) -> np.ndarray:
    """
    All 2**n vectors with entries in {-1, +1}

    Args:
        n: Length of the vectors

    Returns:
        np.ndarray: Array of shape (2**n, n)
    """
    codes = np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]
    return np.where(codes & 1, 1.0, -1.0)


def calculate_text_hash(text: str) -> str:
    """
    SHA-256 hash of a text

    Args:
        text: Text to hash

    Returns:
        str: Hex digest
    """
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def ensure_output_directory(output_path: Union[str, Path]) -> bool:
    """
    Ensure output directory exists, create if necessary

    Args:
        output_path: Path to output directory or file

    Returns:
        bool: True if directory exists or was created successfully
    """
    try:
        path = Path(output_path)
        if path.suffix:  # It's a file path
            path = path.parent
        path.mkdir(parents=True, exist_ok=True)
        return True
    except OSError:
        return False


def parse_int_list(text: str) -> Sequence[int]:
    """
    Parse a comma-separated list of integers

    Args:
        text: e.g. "1, 2, 3"

    Returns:
        Sequence[int]: Parsed integers
    """
    return [int(part) for part in text.replace('\n', ',').split(',') if part.strip()]


def parse_str_list(text: str) -> Sequence[str]:
    """
    Parse a comma-separated list of names

    Args:
        text: e.g. "zero, oracle"

    Returns:
        Sequence[str]: Stripped, non-empty names
    """
    return [part.strip() for part in text.replace('\n', ',').split(',') if part.strip()]
