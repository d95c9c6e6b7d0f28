"""Variable whitelist and alias resolution for the skill sandbox.

Skill code sees three lane features on the inlane side and two on the
outlane side, the ``value[0]`` accumulator, and the current phase
``index``. Generated code sometimes spells the lane features with a
lane-index prefix (``inlane_2_num_vehicle``); every such alias resolves
to its abstract name. Event-aware skills additionally see six
event-context variables (no lane prefix; global per intersection).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

LANE_VARIABLES = frozenset({"num_vehicle", "num_waiting_vehicle", "vehicle_dist"})

# Alias forms actually emitted by generators, per lane side.
_INLANE_ALIASED = ("num_vehicle", "num_waiting_vehicle", "vehicle_dist")
_OUTLANE_ALIASED = ("num_vehicle", "vehicle_dist")

EVENT_VARIABLES = (
    "emergency_distance",
    "emergency_phase",
    "bus_count",
    "bus_delay",
    "incident_blocked",
    "congestion_level",
)

PHASE_INDEX = "index"
ACCUMULATOR = "value[0]"

BUILTINS = ("min", "max", "abs", "sum", "len", "range")

_ALIAS_RE = re.compile(r"^(inlane|outlane)_(\d+)_([a-z_]+)$")


def canonical_binding(name: str) -> str:
    """Strip a lane-index alias prefix down to the abstract name.

    Non-alias names (abstract features, event variables, index) map to
    themselves. This is pure name normalization; whether the name is
    admitted at all is the whitelist's call.
    """
    m = _ALIAS_RE.match(name)
    if m:
        side, _, base = m.groups()
        allowed = _INLANE_ALIASED if side == "inlane" else _OUTLANE_ALIASED
        if base in allowed:
            return base
    return name


@dataclass(frozen=True)
class VariableWhitelist:
    """The set of names a skill body may reference.

    ``lane_variables`` are the abstract feature names; lane-indexed
    aliases resolve onto them. ``event_variables`` is empty for routine
    skills and the six event-context names for event skills.
    """

    lane_variables: frozenset[str] = LANE_VARIABLES
    event_variables: frozenset[str] = frozenset()
    builtins: tuple[str, ...] = BUILTINS
    metadata: tuple[str, ...] = (PHASE_INDEX,)
    accumulator: str = ACCUMULATOR

    def resolve(self, name: str) -> str | None:
        """Map a referenced name to its canonical binding name, or None
        when the name is not admitted by this whitelist."""
        if name in self.lane_variables or name in self.event_variables:
            return name
        if name in self.metadata:
            return name
        m = _ALIAS_RE.match(name)
        if m:
            side, _, base = m.groups()
            allowed = _INLANE_ALIASED if side == "inlane" else _OUTLANE_ALIASED
            if base in allowed and base in self.lane_variables:
                return base
        return None

    def canonical_names(self) -> tuple[str, ...]:
        """All canonical binding names, in a stable order."""
        return tuple(sorted(self.lane_variables)) + tuple(self.event_variables) + self.metadata

    def dummy_bindings(self, fill: float = 1.0) -> dict[str, float]:
        """Bindings for the sandbox dry run: every canonical name bound
        to the same dummy value."""
        return {name: fill for name in self.canonical_names()}


def routine_whitelist() -> VariableWhitelist:
    """Whitelist for routine (non-event) skills: lane features + index."""
    return VariableWhitelist()


def event_whitelist() -> VariableWhitelist:
    """Whitelist for event skills: lane features + index + the six
    event-context variables."""
    return VariableWhitelist(event_variables=frozenset(EVENT_VARIABLES))
