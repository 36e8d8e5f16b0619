"""Kernel context: the unit of optimization.

A context bundles the three code regions (device, host, macros), the parsed
input/tuning spec, a backend tag, and naming metadata. Contexts are immutable;
every edit produces a new value. Identity is a content hash over the canonical
serialization with `label` excluded, so renaming never forks a lineage.

Tuning placeholders use the exact token syntax `@TUNE(NAME)`. Construction
rejects malformed tokens and placeholders without a matching declaration;
the reverse check (declarations without placeholders) runs at workflow
boundaries via `check_placeholder_closure`, because a transformation may
register a tuning parameter one pass before the code that uses it lands.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ContextError, MissingTuningValue, OrphanDeclaration, OrphanPlaceholder, UnknownPlaceholder
from .speclang import ExecutionParams, InputSpec, parse_spec, print_spec

REGION_KINDS = ("device", "host", "macros")

TUNE_TOKEN_RE = re.compile(r"@TUNE\(([A-Za-z_][A-Za-z0-9_]*)\)")
_TUNE_OPEN = "@TUNE("


def _normalize(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def placeholder_names(text: str) -> set[str]:
    """All well-formed `@TUNE(NAME)` tokens; malformed tokens are an error."""
    names = set()
    pos = 0
    while True:
        start = text.find(_TUNE_OPEN, pos)
        if start < 0:
            return names
        m = TUNE_TOKEN_RE.match(text, start)
        if m is None:
            line = text.count("\n", 0, start) + 1
            raise OrphanPlaceholder(f"malformed @TUNE token at line {line}")
        names.add(m.group(1))
        pos = m.end()


@dataclass(frozen=True)
class ContextDigest:
    hash: str  # 64 hex chars (sha-256)

    @property
    def short(self) -> str:
        return self.hash[:12]

    def __str__(self) -> str:
        return self.hash


@dataclass(frozen=True)
class KernelContext:
    device: str
    host: str
    macros: str
    spec: InputSpec
    backend: str
    kernel_name: str
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "device", _normalize(self.device))
        object.__setattr__(self, "host", _normalize(self.host))
        object.__setattr__(self, "macros", _normalize(self.macros))
        if not self.device.strip():
            raise ContextError("device region may not be empty")
        if not self.host.strip():
            raise ContextError("host region may not be empty")
        if self.kernel_name not in self.device:
            raise ContextError(
                f"kernel name '{self.kernel_name}' does not appear in the device region")
        declared = set(self.spec.tuning_names)
        for kind in REGION_KINDS:
            for name in placeholder_names(self.region(kind)):
                if name not in declared:
                    raise OrphanPlaceholder(
                        f"@TUNE({name}) in {kind} region has no tuning declaration")

    def region(self, kind: str) -> str:
        if kind not in REGION_KINDS:
            raise ContextError(f"unknown region kind '{kind}'")
        return getattr(self, kind)

    def all_placeholder_names(self) -> set[str]:
        names: set[str] = set()
        for kind in REGION_KINDS:
            names |= placeholder_names(self.region(kind))
        return names


def check_placeholder_closure(ctx: KernelContext) -> None:
    """Strict two-way closure: tokens and declarations must match exactly."""
    used = ctx.all_placeholder_names()
    declared = set(ctx.spec.tuning_names)
    orphan_tokens = used - declared
    if orphan_tokens:
        raise OrphanPlaceholder(
            f"placeholders without declarations: {sorted(orphan_tokens)}")
    orphan_decls = declared - used
    if orphan_decls:
        raise OrphanDeclaration(
            f"tuning declarations never used in any region: {sorted(orphan_decls)}")


def substitute_tokens(text: str, values: dict[str, int], declared: set[str]) -> str:
    """Replace `@TUNE(NAME)` tokens in raw region text.

    Tokens naming undeclared parameters raise UnknownPlaceholder; declared
    tokens without a value raise MissingTuningValue. No `@TUNE(` substring
    survives substitution.
    """
    for name in placeholder_names(text):
        if name not in declared:
            raise UnknownPlaceholder(name)
        if name not in values:
            raise MissingTuningValue(f"no value for tuning parameter '{name}'")
    out = TUNE_TOKEN_RE.sub(lambda m: str(values[m.group(1)]), text)
    assert _TUNE_OPEN not in out
    return out


def substitute_tuning(ctx: KernelContext, params: ExecutionParams) -> dict[str, str]:
    """Replace every `@TUNE(NAME)` with its decimal value from `params`."""
    declared = set(ctx.spec.tuning_names)
    return {
        kind: substitute_tokens(ctx.region(kind), params.tuning_values, declared)
        for kind in REGION_KINDS
    }


def replace_region(ctx: KernelContext, kind: str, new_text: str) -> KernelContext:
    """New context with one region swapped; placeholder checks re-run."""
    if kind not in REGION_KINDS:
        raise ContextError(f"unknown region kind '{kind}'")
    return replace(ctx, **{kind: new_text})


# --- canonical serialization ----------------------------------------------------

_MAGIC = b"PEAKCTX1"


def _chunk(tag: str, payload: bytes) -> bytes:
    return tag.encode() + b" " + str(len(payload)).encode() + b"\n" + payload + b"\n"


def canonical_serialize(ctx: KernelContext, include_label: bool = True) -> bytes:
    """Deterministic byte encoding; the digest drops the label chunk."""
    parts = [_MAGIC + b"\n"]
    parts.append(_chunk("backend", ctx.backend.encode()))
    parts.append(_chunk("kernel", ctx.kernel_name.encode()))
    if include_label:
        parts.append(_chunk("label", ctx.label.encode()))
    parts.append(_chunk("spec", print_spec(ctx.spec).encode()))
    for kind in REGION_KINDS:
        parts.append(_chunk(kind, ctx.region(kind).encode()))
    return b"".join(parts)


def canonical_deserialize(data: bytes) -> KernelContext:
    if not data.startswith(_MAGIC + b"\n"):
        raise ContextError("not a canonical context blob")
    pos = len(_MAGIC) + 1
    fields: dict[str, str] = {}
    while pos < len(data):
        nl = data.index(b"\n", pos)
        tag, length = data[pos:nl].decode().split(" ")
        n = int(length)
        payload = data[nl + 1:nl + 1 + n]
        if data[nl + 1 + n:nl + 2 + n] != b"\n":
            raise ContextError("corrupt canonical context blob")
        fields[tag] = payload.decode()
        pos = nl + 2 + n
    try:
        return KernelContext(
            device=fields["device"],
            host=fields["host"],
            macros=fields["macros"],
            spec=parse_spec(fields["spec"]),
            backend=fields["backend"],
            kernel_name=fields["kernel"],
            label=fields.get("label", ""),
        )
    except KeyError as exc:
        raise ContextError(f"canonical blob missing field {exc}") from exc


def digest(ctx: KernelContext) -> ContextDigest:
    h = hashlib.sha256(canonical_serialize(ctx, include_label=False)).hexdigest()
    return ContextDigest(h)


# --- on-disk bundle ---------------------------------------------------------------

_BUNDLE_FILES = {"device": "device.src", "host": "host.src", "macros": "macros.src"}


def save_bundle(ctx: KernelContext, directory: Path | str) -> Path:
    """Write the context bundle layout: region sources, spec, JSON meta."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for kind, fname in _BUNDLE_FILES.items():
        (directory / fname).write_text(ctx.region(kind), encoding="utf-8")
    (directory / "spec.pspec").write_text(print_spec(ctx.spec), encoding="utf-8")
    meta = {"backend": ctx.backend, "kernel_name": ctx.kernel_name, "label": ctx.label}
    (directory / "meta").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return directory


def load_bundle(directory: Path | str) -> KernelContext:
    directory = Path(directory)
    meta = json.loads((directory / "meta").read_text(encoding="utf-8"))
    return KernelContext(
        device=(directory / "device.src").read_text(encoding="utf-8"),
        host=(directory / "host.src").read_text(encoding="utf-8"),
        macros=(directory / "macros.src").read_text(encoding="utf-8"),
        spec=parse_spec((directory / "spec.pspec").read_text(encoding="utf-8")),
        backend=meta["backend"],
        kernel_name=meta["kernel_name"],
        label=meta.get("label", ""),
    )
