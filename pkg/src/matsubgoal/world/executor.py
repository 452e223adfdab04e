"""Scripted symbolic controller that carries out one subgoal at a time.

Navigation is abstracted away: after a successful interaction the robot is
placed on the first free cell next to the target (N, E, S, W order), facing it.
A failed subgoal leaves the state untouched.
"""

from __future__ import annotations

from dataclasses import replace

from ..catalog import ACTS, CLASSES, OPENABLE, PICKABLE, RECEPTACLE, SLICEABLE, TOGGLABLE
from ..structures import Pose, Subgoal
from .state import WorldObject, WorldState

# (row step, col step, yaw the robot needs to face the target from there)
_APPROACH = ((-1, 0, 180), (0, 1, 270), (1, 0, 0), (0, -1, 90))


def _approach(state: WorldState, cell: tuple[int, int]) -> Pose:
    r, c = cell
    for dr, dc, yaw in _APPROACH:
        if state.is_ground((r + dr, c + dc)):
            return Pose(r + dr, c + dc, yaw)
    return state.pose


def _candidates(state: WorldState, sg: Subgoal) -> list[WorldObject]:
    cells = set(sg.cells)
    cls = CLASSES[sg.arg]
    return [o for o in state.of_class(cls) if state.cell_of(o.id) in cells]


def execute_subgoal(state: WorldState, sg: Subgoal) -> tuple[WorldState, bool]:
    """Apply ``sg`` to ``state``; returns the new state and whether it succeeded."""
    act = ACTS[sg.act]
    if act == "Stop":
        return state, True
    handler = _HANDLERS[act]
    for obj in _candidates(state, sg):
        new = handler(state, obj)
        if new is not None:
            new.pose = _approach(new, state.cell_of(obj.id))
            return new, True
    return state, False


def _pick_up(state: WorldState, obj: WorldObject) -> WorldState | None:
    if state.held is not None or obj.cls not in PICKABLE or state.enclosed(obj.id):
        return None
    new = state.copy()
    new.objects[obj.id] = replace(obj, parent=None)
    new.held = obj.id
    return new


def _put(state: WorldState, recep: WorldObject) -> WorldState | None:
    if state.held is None or recep.cls not in RECEPTACLE or state.enclosed(recep.id):
        return None
    if recep.cls in OPENABLE and "open" not in recep.states:
        return None
    new = state.copy()
    new.objects[state.held] = replace(state.objects[state.held], parent=recep.id)
    new.held = None
    return new


def _open(state: WorldState, obj: WorldObject) -> WorldState | None:
    if obj.cls not in OPENABLE or "open" in obj.states:
        return None
    new = state.copy()
    new.objects[obj.id] = obj.with_states("open")
    return new


def _close(state: WorldState, obj: WorldObject) -> WorldState | None:
    if obj.cls not in OPENABLE or "open" not in obj.states:
        return None
    new = state.copy()
    new.objects[obj.id] = obj.with_states(remove=("open",))
    if obj.cls == "Fridge":
        for d in state.descendants(obj.id):
            new.objects[d] = new.objects[d].with_states("cooled")
    return new


def _toggle_on(state: WorldState, obj: WorldObject) -> WorldState | None:
    if obj.cls not in TOGGLABLE or "toggled" in obj.states:
        return None
    if obj.cls == "Microwave" and "open" in obj.states:
        return None
    new = state.copy()
    new.objects[obj.id] = obj.with_states("toggled")
    if obj.cls == "Microwave":
        for d in state.descendants(obj.id):
            new.objects[d] = new.objects[d].with_states("heated")
    elif obj.cls == "Faucet":
        for sink in state.objects_at(obj.cell):
            if sink.cls == "Sink":
                for d in state.descendants(sink.id):
                    new.objects[d] = new.objects[d].with_states("clean")
    return new


def _toggle_off(state: WorldState, obj: WorldObject) -> WorldState | None:
    if obj.cls not in TOGGLABLE or "toggled" not in obj.states:
        return None
    new = state.copy()
    new.objects[obj.id] = obj.with_states(remove=("toggled",))
    return new


def _slice(state: WorldState, obj: WorldObject) -> WorldState | None:
    if state.held is None or state.objects[state.held].cls != "Knife":
        return None
    if obj.cls not in SLICEABLE or "sliced" in obj.states or state.enclosed(obj.id):
        return None
    new = state.copy()
    new.objects[obj.id] = obj.with_states("sliced")
    return new


_HANDLERS = {
    "PickUp": _pick_up,
    "Put": _put,
    "Open": _open,
    "Close": _close,
    "ToggleOn": _toggle_on,
    "ToggleOff": _toggle_off,
    "Slice": _slice,
}


# -- goal predicates -----------------------------------------------------------


def goal_holds(state: WorldState, goal: dict) -> bool:
    """Evaluate one class-level goal predicate.

    Kinds: ``placed`` (at least ``count`` objects of class ``obj`` carrying
    ``states`` directly inside a ``recep``, optionally via an intermediate
    ``via`` container), ``holding`` and ``toggled``.
    """
    kind = goal["kind"]
    need = set(goal.get("states", ()))
    if kind == "holding":
        if state.held is None:
            return False
        held = state.objects[state.held]
        return held.cls == goal["obj"] and need <= held.states
    if kind == "toggled":
        return any("toggled" in o.states for o in state.of_class(goal["obj"]))
    if kind == "placed":
        count = 0
        for o in state.of_class(goal["obj"]):
            if not need <= o.states or o.parent is None:
                continue
            parent = state.objects[o.parent]
            if goal.get("via"):
                if parent.cls != goal["via"] or parent.parent is None:
                    continue
                parent = state.objects[parent.parent]
            if parent.cls == goal["recep"]:
                count += 1
        return count >= goal.get("count", 1)
    raise ValueError(f"unknown goal kind {kind!r}")


def goals_satisfied(state: WorldState, goals: list[dict]) -> bool:
    return all(goal_holds(state, g) for g in goals)
