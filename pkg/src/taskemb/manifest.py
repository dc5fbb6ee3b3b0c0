"""Run manifest: content hashes of every stage's inputs and outputs.

Caching is keyed on content, not timestamps: a stage is skipped when its
recorded config hash and input hashes match the current state and all its
outputs still hash to what the manifest recorded. Downstream stages refuse to
run when an upstream artifact no longer matches its manifest entry.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class StaleArtifactError(RuntimeError):
    """An upstream file no longer matches the manifest; rerun it or pass --force."""


@dataclass
class StageRecord:
    name: str
    config_hash: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    seconds: float = 0.0


@dataclass
class Manifest:
    root: Path
    stages: dict[str, StageRecord] = field(default_factory=dict)

    @property
    def path(self) -> Path:
        return self.root / "manifest.txt"

    @classmethod
    def load(cls, root) -> "Manifest":
        root = Path(root)
        man = cls(root)
        path = man.path
        if not path.exists():
            return man
        current: StageRecord | None = None
        for line in path.read_text(encoding="utf-8").splitlines():
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "stage":
                current = StageRecord(parts[1], parts[3])
                man.stages[parts[1]] = current
            elif parts[0] == "seconds" and current is not None:
                current.seconds = float(parts[1])
            elif parts[0] == "input" and current is not None:
                current.inputs[parts[1]] = parts[2]
            elif parts[0] == "output" and current is not None:
                current.outputs[parts[1]] = parts[2]
        return man

    def save(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        lines = []
        for rec in self.stages.values():
            lines.append(f"stage {rec.name} config {rec.config_hash}")
            lines.append(f"seconds {repr(rec.seconds)}")
            for rel, digest in sorted(rec.inputs.items()):
                lines.append(f"input {rel} {digest}")
            for rel, digest in sorted(rec.outputs.items()):
                lines.append(f"output {rel} {digest}")
        self.path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def _rel(self, path) -> str:
        return str(Path(path).relative_to(self.root))

    def record(self, name: str, config_hash: str, inputs: list, outputs: list,
               seconds: float) -> None:
        rec = StageRecord(name, config_hash, seconds=seconds)
        for p in inputs:
            rec.inputs[self._rel(p)] = file_hash(p)
        for p in outputs:
            rec.outputs[self._rel(p)] = file_hash(p)
        self.stages[name] = rec
        self.save()

    def up_to_date(self, name: str, config_hash: str, inputs: list) -> bool:
        """True when the stage ran with this config on these inputs and its
        outputs are untouched."""
        rec = self.stages.get(name)
        if rec is None or rec.config_hash != config_hash:
            return False
        current_inputs = {self._rel(p): file_hash(p) for p in inputs}
        if rec.inputs != current_inputs:
            return False
        for rel, digest in rec.outputs.items():
            path = self.root / rel
            if not path.exists() or file_hash(path) != digest:
                return False
        return True

    def outputs_of(self, name: str) -> list[Path]:
        rec = self.stages.get(name)
        if rec is None:
            raise StaleArtifactError(f"stage {name!r} has not been run in this directory")
        return [self.root / rel for rel in sorted(rec.outputs)]

    def verify_upstream(self, name: str, force: bool = False) -> list[Path]:
        """Outputs of an upstream stage, hash-checked against the manifest."""
        rec = self.stages.get(name)
        if rec is None:
            raise StaleArtifactError(f"stage {name!r} has not been run in this directory")
        paths = []
        for rel, digest in sorted(rec.outputs.items()):
            path = self.root / rel
            if not path.exists():
                raise StaleArtifactError(f"{rel}: missing output of stage {name!r}")
            if not force and file_hash(path) != digest:
                raise StaleArtifactError(
                    f"{rel} was modified after stage {name!r} recorded it; "
                    f"rerun the stage or pass --force"
                )
            paths.append(path)
        return paths
