from typing import Any, Dict, Union
from datetime import datetime, timezone

from congestexp.dependencies.BaseData import BaseData

RUN_STARTED = "run_started"
RUN_FINISHED = "run_finished"
BOUND_VIOLATION = "bound_violation"
HYPOTHESIS_WARNING = "hypothesis_warning"
SWEEP_POINT = "sweep_point"
EVENT_KINDS = (RUN_STARTED, RUN_FINISHED, BOUND_VIOLATION, HYPOTHESIS_WARNING, SWEEP_POINT)


def _to_iso_utc_z(dt: Union[str, datetime]) -> str:
    """Normalize input to ISO8601 UTC with trailing 'Z'."""
    if isinstance(dt, datetime):
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return dt.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")
    if isinstance(dt, str) and dt.endswith("Z"):
        return dt
    try:
        parsed = datetime.fromisoformat(str(dt).replace("Z", "+00:00"))
    except ValueError:
        raise ValueError(f"Invalid datetime format (expect ISO8601 UTC): {dt}")
    return parsed.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


class EventData(BaseData):
    datetime: str
    kind: str
    content: Dict[str, Any]
    labels: Dict[str, Any]

    def get_defaults(self):
        return {EventData.labels: {}, EventData.content: {}}

    def do_pre_process(self, in_dict):
        if in_dict.get(EventData.datetime) is None:
            in_dict[EventData.datetime] = _to_iso_utc_z(datetime.now(timezone.utc))
        else:
            in_dict[EventData.datetime] = _to_iso_utc_z(in_dict[EventData.datetime])
        if in_dict.get(EventData.labels) is None:
            in_dict[EventData.labels] = {}
        if in_dict.get(EventData.content) is None:
            in_dict[EventData.content] = {}
        return in_dict

    def do_validation(self, key, value):
        # labels stay flat primitives so they can be filtered without parsing content
        if key == EventData.labels:
            if not isinstance(value, dict):
                return value, "labels must be a dict"
            for k, v in value.items():
                if not isinstance(k, str):
                    return value, "labels keys must be str"
                if not (isinstance(v, (str, int, float, bool)) or v is None):
                    return value, f"labels[{k}] has invalid type: {type(v).__name__}"
        if key == EventData.kind and value not in EVENT_KINDS:
            return value, f"unknown event kind {value!r}"
        return value, ""


def make_event(kind: str, content: dict = None, **labels) -> EventData:
    return EventData({
        EventData.kind: kind,
        EventData.content: BaseData.to_safe_value(content or {}),
        EventData.labels: labels,
    })
