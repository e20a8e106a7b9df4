"""Model-access interface shared by the replay and live drivers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterator, Protocol

from ..observations import TokenObservation

if TYPE_CHECKING:
    from ..induction import InductionPrompt


class DriverError(RuntimeError):
    """Model access failed; the session cannot continue."""


class DriverConfigError(ValueError):
    """The driver cannot run as configured (missing capability, bad file)."""


@dataclass(frozen=True)
class Generation:
    """A short auxiliary completion with per-token distributions."""

    text: str
    tokens: tuple[TokenObservation, ...]


class TokenStream(Protocol):
    def __iter__(self) -> Iterator[TokenObservation]: ...

    def close(self) -> None: ...


class Driver(Protocol):
    name: str

    def stream(self, question: str) -> TokenStream:
        """Open the main reasoning stream for ``question``."""
        ...

    def induce(self, question: str, reasoning: str, prompt: "InductionPrompt", step_index: int) -> Generation:
        """Run one greedy auxiliary generation after ``reasoning``."""
        ...
