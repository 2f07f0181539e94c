"""Dataset manifests: CSV listings of reference/distorted pairs with
subjective scores.

The format is one header line ``reference,distorted,score,tag`` followed
by one record per row; image paths are resolved against the manifest's
directory. Whether a higher subjective score means better quality varies
by dataset, so the polarity is supplied by the caller rather than guessed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

_HEADER = ["reference", "distorted", "score", "tag"]


@dataclass(frozen=True)
class ManifestRecord:
    reference: Path
    distorted: Path
    score: float
    tag: str


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    higher_better: bool = True
    records: list[ManifestRecord] = field(default_factory=list)

    @property
    def references(self) -> list[Path]:
        seen: dict[Path, None] = {}
        for record in self.records:
            seen.setdefault(record.reference)
        return list(seen)


def load_manifest(path, higher_better: bool = True) -> DatasetManifest:
    """Parse and validate a manifest CSV.

    Raises ``ValueError`` for format problems and ``FileNotFoundError``
    when a referenced image is missing.
    """
    path = Path(path)
    base = path.parent
    records: list[ManifestRecord] = []
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty manifest") from None
        if [h.strip().lower() for h in header] != _HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(_HEADER)!r}, got {','.join(header)!r}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 fields, got {len(row)}")
            ref = (base / row[0].strip()).resolve()
            dis = (base / row[1].strip()).resolve()
            try:
                score = float(row[2])
            except ValueError:
                raise ValueError(f"{path}:{line_no}: bad score {row[2]!r}") from None
            for image in (ref, dis):
                if not image.is_file():
                    raise FileNotFoundError(f"{path}:{line_no}: missing image {image}")
            records.append(ManifestRecord(ref, dis, score, row[3].strip() or "untagged"))
    if not records:
        raise ValueError(f"{path}: manifest holds no records")
    return DatasetManifest(name=path.stem, higher_better=higher_better, records=records)
