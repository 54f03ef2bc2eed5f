"""Packet-level simulator for proof-of-work stamped TCP SYNs with an adaptive
SDN difficulty controller."""

from .pow_core import HashBackend, build_puzzle_input, expected_trials, meets_difficulty, solve, verify

__all__ = ["HashBackend", "build_puzzle_input", "expected_trials", "meets_difficulty", "solve", "verify"]
__version__ = "0.1.0"
