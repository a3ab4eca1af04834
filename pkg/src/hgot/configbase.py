from __future__ import annotations

from pydantic import BaseModel, ConfigDict, ValidationError

from .errors import ConfigError


class StrictModel(BaseModel):
    """Frozen pydantic model that rejects unknown keys and raises ConfigError."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    def __init__(self, **data):
        try:
            super().__init__(**data)
        except ValidationError as exc:
            issues = _issues(exc)
            err = ConfigError(f"invalid {type(self).__name__}: " + "; ".join(f"{loc}: {msg}" for loc, msg in issues))
            err.issues = issues
            raise err from None

    @classmethod
    def from_dict(cls, data: dict):
        if not isinstance(data, dict):
            raise ConfigError(f"invalid {cls.__name__}: expected a JSON object, got {type(data).__name__}")
        return cls(**data)


def _issues(exc: ValidationError) -> list[tuple[str, str]]:
    # nested StrictModels raise ConfigError inside validation; splice their issues
    # in under the parent location so messages name the full dotted field path
    out = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        inner = (err.get("ctx") or {}).get("error")
        if isinstance(inner, ConfigError) and hasattr(inner, "issues"):
            out.extend((".".join(filter(None, (loc, l))) or "<root>", m) for l, m in inner.issues)
        else:
            out.append((loc or "<root>", err["msg"]))
    return out
