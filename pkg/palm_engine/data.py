"""Corpus discovery: local roots, ``PALM_DATA_PATH`` and optional hub snapshots."""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from .config import ENV_CACHE_DIR, ENV_DATA_PATH, ENV_REMOTE_DATASET
from .corpus import read_lines
from .errors import CorpusError
from .treebank import GoldTree, read_bracketed

try:  # huggingface_hub is optional
    from huggingface_hub import snapshot_download  # type: ignore[import-untyped]
except Exception:  # pragma: no cover
    snapshot_download = None  # type: ignore[assignment]

DEFAULT_CACHE_DIR = str(Path.home() / ".cache" / "palm_engine" / "datasets")

# Any directory containing one of these is considered a corpus root
CORPUS_MARKERS = ("train.txt", "valid.txt", "test.txt")


@dataclass
class DataRepository:
    """
    Resolve relative corpus paths against, in order:
      1. the explicit ``base_path``
      2. ``PALM_DATA_PATH``
      3. repo-local ``data/``
      4. a snapshot of ``remote_dataset`` (or ``PALM_REMOTE_DATASET``) from the hub
    Absolute paths are used as given.
    """

    base_path: Optional[Path | str] = None
    remote_dataset: Optional[str] = None
    cache_dir: Optional[str] = None

    def __post_init__(self) -> None:
        self.remote_dataset = self.remote_dataset or os.getenv(ENV_REMOTE_DATASET) or None
        self.cache_dir = self.cache_dir or os.getenv(ENV_CACHE_DIR) or DEFAULT_CACHE_DIR
        self._snapshot: Optional[Path] = None

    # ------------------------------------------------------------------
    # Root resolution
    # ------------------------------------------------------------------

    def _local_roots(self) -> List[Path]:
        roots: List[Path] = []
        if self.base_path:
            roots.append(Path(self.base_path).expanduser())
        env = os.getenv(ENV_DATA_PATH)
        if env:
            roots.append(Path(env).expanduser())
        roots.append(Path(__file__).resolve().parent.parent / "data")
        return [root for root in roots if root.is_dir()]

    def resolve(self, name: str | Path, *, required: bool = True) -> Optional[Path]:
        """First existing file called ``name`` under the candidate roots."""

        path = Path(name).expanduser()
        if path.is_file():
            return path
        if not path.is_absolute():
            for root in self._local_roots():
                if (root / path).is_file():
                    return root / path
            if self.remote_dataset:
                snapshot = self._download_remote_dataset(self.remote_dataset)
                if snapshot is not None and (snapshot / path).is_file():
                    return snapshot / path
        if required:
            raise CorpusError(f"corpus file {str(name)!r} not found")
        warnings.warn(f"optional corpus file {str(name)!r} not found", RuntimeWarning, stacklevel=2)
        return None

    # ------------------------------------------------------------------
    # Remote dataset support via Hugging Face Hub (optional)
    # ------------------------------------------------------------------

    def _download_remote_dataset(self, repo_id: str) -> Optional[Path]:
        if self._snapshot is not None:
            return self._snapshot
        if snapshot_download is None:
            warnings.warn(
                "huggingface_hub is not installed; cannot download remote dataset",
                RuntimeWarning,
                stacklevel=2,
            )
            return None

        cache_dir = Path(str(self.cache_dir)).expanduser()
        cache_dir.mkdir(parents=True, exist_ok=True)
        local_dir = cache_dir / repo_id.replace("/", "__")
        try:
            snapshot_path = snapshot_download(
                repo_id=repo_id,
                repo_type="dataset",
                local_dir=str(local_dir),
            )
        except Exception as exc:  # pragma: no cover
            warnings.warn(
                f"Failed to download dataset '{repo_id}': {exc}",
                RuntimeWarning,
                stacklevel=2,
            )
            return None

        self._snapshot = self._locate_corpus_root(Path(snapshot_path)) or Path(snapshot_path)
        return self._snapshot

    def _locate_corpus_root(self, root: Path) -> Optional[Path]:
        """Search ``root`` for a directory containing corpus markers."""
        markers = set(CORPUS_MARKERS)
        for current, _dirs, files in os.walk(root):
            if markers.intersection(files):
                return Path(current)
        return None

    # ------------------------------------------------------------------
    # Typed loaders
    # ------------------------------------------------------------------

    def load_lines(self, name: str | Path) -> List[str]:
        """One tokenized sentence per line."""
        path = self.resolve(name)
        assert path is not None
        lines = read_lines(path)
        if not lines:
            raise CorpusError(f"corpus file {path} is empty")
        return lines

    def load_trees(self, name: str | Path, *, labeled: bool = True) -> List[GoldTree]:
        """Bracketed trees, one per line."""
        path = self.resolve(name)
        assert path is not None
        return read_bracketed(path.read_text(encoding="utf-8"), labeled=labeled)

    def load_optional_trees(self, name: str | Path) -> Optional[List[GoldTree]]:
        if not name:
            return None
        path = self.resolve(name, required=False)
        if path is None:
            return None
        return read_bracketed(path.read_text(encoding="utf-8"))


__all__ = ["DataRepository", "CORPUS_MARKERS", "DEFAULT_CACHE_DIR"]
