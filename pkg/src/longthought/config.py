"""Run configuration: a flat, commented key-value file.

Example:

    # where everything lives
    workspace = ./work
    bands = 0-2000,2000-4000,4000-8000
    seed.sample = 7
    sampling.temperature = 1.0
    policy.mode = binned
    endpoint.teacher.base_url = http://127.0.0.1:8731
    endpoint.teacher.model = teacher-72b
    endpoint.teacher.api_key_env = TEACHER_API_KEY

Dotted keys group into endpoints, seeds, sampling, and retention policy.
Relative paths resolve against the directory holding the config file.
API keys are never stored here; endpoints name an environment variable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .client import EndpointConfig, SamplingParams
from .corpus import DEFAULT_BANDS, validate_bands
from .distill import RetentionPolicy
from .errors import IoFailure, SchemaViolation

_TOP_KEYS = {"workspace", "store_dir", "cache_dir", "output_dir",
             "image_root", "max_inflight", "bands"}
_SAMPLING_KEYS = {"temperature", "top_p", "max_tokens", "mode"}
_POLICY_KEYS = {"mode", "max_retained_per_problem", "n_rollouts"}
_ENDPOINT_KEYS = {"base_url", "model", "api_key_env", "timeout",
                  "max_retries", "backoff_base"}


def parse_bands(text: str) -> tuple[tuple[int, int], ...]:
    """Parse "0-2000,2000-4000" into ((0, 2000), (2000, 4000))."""
    bands = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        low, sep, high = part.partition("-")
        if not sep:
            raise SchemaViolation(f"band {part!r} is not low-high", field="bands")
        try:
            bands.append((int(low), int(high)))
        except ValueError as exc:
            raise SchemaViolation(f"band {part!r} is not numeric",
                                  field="bands") from exc
    return tuple(validate_bands(bands))


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs beyond its own flags."""

    workspace: Path
    store_dir: Path
    cache_dir: Path
    output_dir: Path
    image_root: Path | None
    max_inflight: int
    bands: tuple[tuple[int, int], ...]
    seeds: dict[str, int]
    sampling: SamplingParams
    policy: RetentionPolicy
    endpoints: dict[str, EndpointConfig]
    raw_text: str = field(repr=False, default="")

    def endpoint(self, name: str) -> EndpointConfig:
        try:
            return self.endpoints[name]
        except KeyError:
            known = ", ".join(sorted(self.endpoints)) or "none"
            raise SchemaViolation(
                f"endpoint {name!r} is not configured (known: {known})") from None

    def seed(self, stage: str, default: int = 0) -> int:
        return self.seeds.get(stage, self.seeds.get("default", default))


def _parse_lines(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise SchemaViolation("expected key = value", line=lineno)
        key = key.strip()
        value = value.strip()
        if not key or not value:
            raise SchemaViolation("empty key or value", line=lineno)
        if key in pairs:
            raise SchemaViolation(f"duplicate key {key!r}", line=lineno)
        pairs[key] = value
    return pairs


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise SchemaViolation(f"{key} must be an integer, got {value!r}",
                              field=key) from exc


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise SchemaViolation(f"{key} must be a number, got {value!r}",
                              field=key) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    pairs = _parse_lines(text)
    base = path.resolve().parent

    def resolve(p: str) -> Path:
        candidate = Path(p)
        return candidate if candidate.is_absolute() else base / candidate

    top: dict[str, str] = {}
    seeds: dict[str, int] = {}
    sampling_kw: dict = {}
    policy_kw: dict = {}
    endpoint_kw: dict[str, dict] = {}
    for key, value in pairs.items():
        if "." not in key:
            if key not in _TOP_KEYS:
                raise SchemaViolation(f"unknown key {key!r}", field=key)
            top[key] = value
            continue
        group, _, rest = key.partition(".")
        if group == "seed":
            seeds[rest] = _to_int(key, value)
        elif group == "sampling":
            if rest not in _SAMPLING_KEYS:
                raise SchemaViolation(f"unknown key {key!r}", field=key)
            if rest in ("temperature", "top_p"):
                sampling_kw[rest] = _to_float(key, value)
            elif rest == "max_tokens":
                sampling_kw[rest] = _to_int(key, value)
            else:
                sampling_kw[rest] = value
        elif group == "policy":
            if rest not in _POLICY_KEYS:
                raise SchemaViolation(f"unknown key {key!r}", field=key)
            if rest == "mode":
                policy_kw[rest] = value
            else:
                policy_kw[rest] = _to_int(key, value)
        elif group == "endpoint":
            name, sep, fld = rest.partition(".")
            if not sep or fld not in _ENDPOINT_KEYS:
                raise SchemaViolation(f"unknown key {key!r}", field=key)
            slot = endpoint_kw.setdefault(name, {})
            if fld in ("timeout", "backoff_base"):
                slot[fld] = _to_float(key, value)
            elif fld == "max_retries":
                slot[fld] = _to_int(key, value)
            else:
                slot[fld] = value
        else:
            raise SchemaViolation(f"unknown key {key!r}", field=key)

    if "workspace" not in top:
        raise SchemaViolation("config must set workspace", field="workspace")
    workspace = resolve(top["workspace"])

    endpoints: dict[str, EndpointConfig] = {}
    for name, kw in endpoint_kw.items():
        for required in ("base_url", "model"):
            if required not in kw:
                raise SchemaViolation(
                    f"endpoint {name!r} is missing {required}",
                    field=f"endpoint.{name}.{required}")
        endpoints[name] = EndpointConfig(**kw)

    try:
        sampling = SamplingParams(**sampling_kw)
        policy = RetentionPolicy(**policy_kw)
    except ValueError as exc:
        raise SchemaViolation(str(exc)) from exc

    return RunConfig(
        workspace=workspace,
        store_dir=resolve(top["store_dir"]) if "store_dir" in top else workspace / "store",
        cache_dir=resolve(top["cache_dir"]) if "cache_dir" in top else workspace / "cache",
        output_dir=resolve(top["output_dir"]) if "output_dir" in top else workspace / "out",
        image_root=resolve(top["image_root"]) if "image_root" in top else None,
        max_inflight=_to_int("max_inflight", top.get("max_inflight", "4")),
        bands=parse_bands(top["bands"]) if "bands" in top else DEFAULT_BANDS,
        seeds=seeds,
        sampling=sampling,
        policy=policy,
        endpoints=endpoints,
        raw_text=text,
    )
