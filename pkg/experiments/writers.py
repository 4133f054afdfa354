"""
Output files: CSV tables and the JSON run manifest.

Tables are written by pandas with 17 significant digits, CRLF line endings
and minimal quoting, so identical inputs give byte-identical files.
"""
import hashlib
import json
import logging
import platform
from dataclasses import dataclass
from pathlib import Path

import django
import numpy as np
import pandas as pd
import scipy

import nfisac

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
LINE_TERMINATOR = '\r\n'
MANIFEST_NAME = 'manifest.json'


@dataclass(frozen=True)
class Artifact:
    file_name: str
    rows: int
    columns: tuple
    sha256: str

    def as_dict(self):
        return {
            'file': self.file_name,
            'rows': self.rows,
            'columns': list(self.columns),
            'sha256': self.sha256,
        }


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def write_table(directory, name, rows, columns=None):
    """
    Write one CSV table

    Args:
        directory (Path): Target directory, created if missing
        name (str): File stem; ``.csv`` is appended
        rows (list | DataFrame): Records (dicts) or a ready DataFrame
        columns (list, optional): Column order for record input

    Returns:
        Artifact: File name, row count, columns and checksum
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame.from_records(rows, columns=columns)
    path = directory / f"{name}.csv"
    frame.to_csv(
        path,
        index=False,
        float_format=FLOAT_FORMAT,
        lineterminator=LINE_TERMINATOR,
        encoding='utf-8',
    )
    artifact = Artifact(path.name, len(frame), tuple(str(c) for c in frame.columns), file_sha256(path))
    logger.debug(f"Wrote {artifact.rows} rows to {path}")
    return artifact


def write_records_json(directory, name, frame):
    """Same table as a JSON list of records, for consumers that do not read CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{name}.json"
    frame.to_json(path, orient='records', double_precision=15, indent=1)
    return Artifact(path.name, len(frame), tuple(str(c) for c in frame.columns), file_sha256(path))


def versions():
    return {
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'django': django.get_version(),
        'nfisac': nfisac.__version__,
    }


def write_manifest(directory, experiment, config, artifacts, extra=None):
    """
    Write ``manifest.json`` tying every output file to the configuration

    Args:
        directory (Path): Output directory of the run
        experiment (str): Recipe name
        config (ScenarioConfig): Validated configuration
        artifacts (list): Artifact per written table
        extra (dict, optional): Recipe-specific facts (e.g. per-distance powers)

    Returns:
        Path: The manifest path
    """
    manifest = {
        'experiment': experiment,
        'seed': str(config.seed),
        'preset': config.preset,
        'config_hash': config.config_hash,
        'config': config.raw,
        'derived': config.derived(),
        'versions': versions(),
        'files': [artifact.as_dict() for artifact in artifacts],
    }
    if extra:
        manifest['extra'] = extra
    path = Path(directory) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + '\n', encoding='utf-8')
    logger.info(f"Manifest for {experiment} written to {path}")
    return path
