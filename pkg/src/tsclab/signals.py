"""Signal controllers: phase programs, yellow/all-red interlocks, switch requests.

All stage timing is counted in integer simulation steps so that green,
yellow and all-red intervals are exact at any resolution.
"""
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple, Union

from .errors import BadTiming, EmptyProgram, LengthMismatch, UnknownPhase
from .scenario import PhaseDef, Timing

ACCEPTED = "accepted"
DEFERRED = "deferred"
REJECTED = "rejected"


class Stage(Enum):
    GREEN = "GREEN"
    YELLOW = "YELLOW"
    ALLRED = "ALLRED"


def yellow_mask(from_string: str, to_string: str) -> str:
    """Transition string between two phases.

    A movement keeps G if green in both phases, shows Y if it loses green,
    and R otherwise.
    """
    if len(from_string) != len(to_string):
        raise LengthMismatch(
            f"phase strings differ in length: {len(from_string)} vs {len(to_string)}"
        )
    out = []
    for f, t in zip(from_string, to_string):
        if f == "G" and t == "G":
            out.append("G")
        elif f == "G":
            out.append("Y")
        else:
            out.append("R")
    return "".join(out)


@dataclass
class PhaseSnapshot:
    """Read-only view of a controller, used by observations and the bus."""

    phase_index: int
    stage: Stage
    signal_string: str
    green_elapsed: float
    stage_elapsed: float
    committed_duration: float
    since_green_onset: float
    pending_phase: Optional[int]


class SignalController:
    """Tick-driven phase machine for one intersection.

    The controller starts in the first phase of its program.  A green ends
    when a requested switch becomes eligible (min green served), when its
    committed duration expires, or when max green forces it; the program then
    runs yellow and all-red for their exact configured lengths before the
    next green begins.  With no external requests the phases cycle in
    program order, each lasting its default green.
    """

    __slots__ = (
        "phases", "strings", "default_steps", "timing", "res",
        "yellow_steps", "allred_steps", "min_steps", "max_steps",
        "stage", "phase", "ge", "se", "committed", "pending",
        "_next", "signal_string", "total", "onset_total", "changed",
        "n_movements",
    )

    def __init__(self, program: List[PhaseDef], timing: Timing, sim_res: int):
        if not program:
            raise EmptyProgram("signal program has no phases")
        if timing.yellow_time < 0 or timing.allred_time < 0:
            raise BadTiming("yellow_time and allred_time must be >= 0")
        if timing.min_green <= 0:
            raise BadTiming("min_green must be > 0")
        if timing.max_green < timing.min_green:
            raise BadTiming("max_green must be >= min_green")
        lengths = {len(p.signal_string) for p in program}
        if len(lengths) != 1:
            raise LengthMismatch("phases disagree on movement count")

        self.phases = list(program)
        self.strings = [p.signal_string for p in program]
        self.n_movements = len(program[0].signal_string)
        self.timing = timing
        self.res = int(sim_res)
        self.default_steps = [round(p.default_green * self.res) for p in program]
        self.yellow_steps = round(timing.yellow_time * self.res)
        self.allred_steps = round(timing.allred_time * self.res)
        self.min_steps = round(timing.min_green * self.res)
        self.max_steps = round(timing.max_green * self.res)

        self.stage = Stage.GREEN
        self.phase = 0
        self.ge = 0  # green elapsed, steps
        self.se = 0  # stage elapsed in yellow/all-red, steps
        self.committed = max(self.default_steps[0], self.min_steps)
        self.pending: Optional[Tuple[int, Optional[int]]] = None
        self._next: Tuple[int, Optional[int]] = (0, None)
        self.signal_string = self.strings[0]
        self.total = 0
        self.onset_total = 0
        self.changed = False

    # -- request handling -----------------------------------------------------

    def _resolve(self, phase_ref: Union[int, str]) -> int:
        if isinstance(phase_ref, int):
            if not (0 <= phase_ref < len(self.phases)):
                raise UnknownPhase(f"phase index {phase_ref} out of range")
            return phase_ref
        for i, p in enumerate(self.phases):
            if p.phase_id == phase_ref:
                return i
        raise UnknownPhase(f"no phase named {phase_ref!r}")

    def set_next_phase(self, phase_ref: Union[int, str], duration: Optional[float] = None) -> str:
        """Request a phase; returns 'accepted', 'deferred' or 'rejected'.

        Requesting the current phase extends its committed duration so the
        green persists for the next `duration` seconds.  A different phase is
        deferred until min green has been served; during a transition only
        the in-flight target may be re-requested (to adjust its duration).
        """
        idx = self._resolve(phase_ref)
        dur_steps: Optional[int] = None
        if duration is not None:
            clamped = min(max(float(duration), self.timing.min_green), self.timing.max_green)
            dur_steps = round(clamped * self.res)

        if self.stage is Stage.GREEN:
            if idx == self.phase:
                extend = dur_steps if dur_steps is not None else self.default_steps[idx]
                # +1 step: the green must survive through the request instant
                self.committed = min(self.ge + extend + 1, self.max_steps)
                self.pending = None
                return ACCEPTED
            self.pending = (idx, dur_steps)
            return ACCEPTED if self.ge >= self.min_steps else DEFERRED
        if idx == self._next[0]:
            self._next = (idx, dur_steps if dur_steps is not None else self._next[1])
            return ACCEPTED
        return REJECTED

    # -- stage machine ----------------------------------------------------------

    def _enter_green(self, idx: int, dur_steps: Optional[int]) -> None:
        self.phase = idx
        self.stage = Stage.GREEN
        self.ge = 0
        self.committed = max(
            dur_steps if dur_steps is not None else self.default_steps[idx],
            self.min_steps,
        )
        self.signal_string = self.strings[idx]
        self.onset_total = self.total
        self.changed = True

    def _begin_transition(self, idx: int, dur_steps: Optional[int]) -> None:
        self._next = (idx, dur_steps)
        if self.yellow_steps > 0:
            self.stage = Stage.YELLOW
            self.se = 0
            self.signal_string = yellow_mask(self.strings[self.phase], self.strings[idx])
            self.changed = True
        elif self.allred_steps > 0:
            self.stage = Stage.ALLRED
            self.se = 0
            self.signal_string = "R" * self.n_movements
            self.changed = True
        else:
            self._enter_green(idx, dur_steps)

    def tick(self) -> None:
        """Advance the controller one simulation step."""
        self.total += 1
        if self.stage is Stage.GREEN:
            self.ge += 1
            due = (
                (self.pending is not None and self.ge >= self.min_steps)
                or self.ge >= self.committed
                or self.ge >= self.max_steps
            )
            if due:
                if self.pending is not None:
                    idx, dur = self.pending
                    self.pending = None
                else:
                    idx, dur = (self.phase + 1) % len(self.phases), None
                if idx == self.phase:
                    # one-phase program: renew the green in place
                    self.committed = self.ge + self.default_steps[idx]
                else:
                    self._begin_transition(idx, dur)
        elif self.stage is Stage.YELLOW:
            self.se += 1
            if self.se >= self.yellow_steps:
                if self.allred_steps > 0:
                    self.stage = Stage.ALLRED
                    self.se = 0
                    self.signal_string = "R" * self.n_movements
                    self.changed = True
                else:
                    self._enter_green(*self._next)
        else:  # ALLRED
            self.se += 1
            if self.se >= self.allred_steps:
                self._enter_green(*self._next)

    def consume_change(self) -> bool:
        """True once per display change; used by the engine's controller log."""
        if self.changed:
            self.changed = False
            return True
        return False

    # -- views ------------------------------------------------------------------

    @property
    def green_elapsed(self) -> float:
        return self.ge / self.res

    @property
    def stage_elapsed(self) -> float:
        return self.se / self.res

    @property
    def committed_duration(self) -> float:
        return self.committed / self.res

    @property
    def since_green_onset(self) -> float:
        return (self.total - self.onset_total) / self.res

    @property
    def current_phase(self) -> int:
        """Active phase during green; the in-flight target during a transition."""
        return self.phase if self.stage is Stage.GREEN else self._next[0]

    def get_phase_state(self) -> str:
        return self.signal_string

    def snapshot(self) -> PhaseSnapshot:
        return PhaseSnapshot(
            phase_index=self.current_phase,
            stage=self.stage,
            signal_string=self.signal_string,
            green_elapsed=self.green_elapsed,
            stage_elapsed=self.stage_elapsed,
            committed_duration=self.committed_duration,
            since_green_onset=self.since_green_onset,
            pending_phase=self.pending[0] if self.pending else None,
        )


def new_controller(program: List[PhaseDef], timing: Timing, sim_res: int) -> SignalController:
    return SignalController(program, timing, sim_res)
