"""
Dataset storage for multi-subject epoch data

A dataset is a directory holding `manifest.json` plus one raw payload file
per session. Payloads are little-endian float64, trials concatenated, each
trial stored row-major as C x T.
"""
import json
import logging
import os
from typing import Dict, List, Optional

import numpy as np

from models.trial_set import SubjectRecord, TrialSet

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
PAYLOAD_DTYPE = np.dtype("<f8")


class DatasetError(ValueError):
    """Base class for dataset format problems"""


class ManifestError(DatasetError):
    """Manifest missing, unreadable, or of an unsupported format version"""


class DimensionMismatchError(DatasetError):
    """Payload or labels disagree with the dimensions declared in the manifest"""


class TruncatedPayloadError(DatasetError):
    """Payload file holds fewer bytes than a whole number of trials needs"""


class DatasetManager:
    """Reads and writes datasets in the manifest + raw payload format"""

    def __init__(self, root: str):
        self.root = root

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.root, MANIFEST_NAME)

    def save(self, records: List[SubjectRecord]) -> str:
        """Write all records; returns the manifest path"""
        os.makedirs(self.root, exist_ok=True)
        subjects = []
        for index, record in enumerate(records):
            entry = {'id': record.subject_id}
            for name in ("train", "test"):
                entry[name] = self._write_session(index, record.subject_id, name, record.session(name))
            subjects.append(entry)

        manifest = {'format_version': FORMAT_VERSION, 'subjects': subjects}
        with open(self.manifest_path, 'w') as f:
            json.dump(manifest, f, indent=2)
        logger.info(f"Saved {len(records)} subjects to {self.root}")
        return self.manifest_path

    def _write_session(self, index: int, subject_id: str, name: str, ts: TrialSet) -> Dict:
        # index prefix keeps names unique when sanitized ids collide
        file_name = f"{index:04d}_{_safe_name(subject_id)}_{name}.f64"
        payload = np.ascontiguousarray(ts.trials, dtype=PAYLOAD_DTYPE)
        payload.tofile(os.path.join(self.root, file_name))
        return {
            'file': file_name,
            'n_trials': ts.n_trials,
            'channels': ts.channels,
            'samples': ts.samples,
            'labels': [int(v) for v in ts.labels],
        }

    def load(self) -> List[SubjectRecord]:
        manifest = self.read_manifest()
        records = []
        for entry in manifest['subjects']:
            subject_id = str(entry.get('id', ''))
            if not subject_id:
                raise ManifestError("subject entry without an 'id'")
            sessions = {name: self._read_session(subject_id, name, entry.get(name))
                        for name in ("train", "test")}
            if sessions['train'].channels != sessions['test'].channels:
                raise DimensionMismatchError(
                    f"subject '{subject_id}': train has {sessions['train'].channels} channels, "
                    f"test has {sessions['test'].channels}"
                )
            records.append(SubjectRecord(subject_id, sessions['train'], sessions['test']))
        logger.info(f"Loaded {len(records)} subjects from {self.root}")
        return records

    def read_manifest(self) -> Dict:
        if not os.path.exists(self.manifest_path):
            raise ManifestError(f"no {MANIFEST_NAME} in {self.root}")
        try:
            with open(self.manifest_path) as f:
                manifest = json.load(f)
        except json.JSONDecodeError as e:
            raise ManifestError(f"{self.manifest_path} is not valid JSON: {e}") from e
        if not isinstance(manifest, dict) or manifest.get('format_version') != FORMAT_VERSION:
            found = manifest.get('format_version') if isinstance(manifest, dict) else None
            raise ManifestError(
                f"unsupported dataset format_version {found!r} (expected {FORMAT_VERSION})"
            )
        if not isinstance(manifest.get('subjects'), list):
            raise ManifestError("manifest field 'subjects' must be a list")
        return manifest

    def _read_session(self, subject_id: str, name: str, spec: Optional[Dict]) -> TrialSet:
        where = f"subject '{subject_id}' {name}"
        if not isinstance(spec, dict):
            raise ManifestError(f"{where}: missing session entry")
        try:
            file_name = spec['file']
            n_trials, channels, samples = (int(spec[k]) for k in ('n_trials', 'channels', 'samples'))
            labels = [int(v) for v in spec['labels']]
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"{where}: malformed session entry ({e})") from e

        if len(labels) != n_trials:
            raise DimensionMismatchError(f"{where}: {len(labels)} labels for {n_trials} trials")

        path = os.path.join(self.root, file_name)
        if not os.path.exists(path):
            raise ManifestError(f"{where}: payload file '{file_name}' not found")
        n_bytes = os.path.getsize(path)
        expected = n_trials * channels * samples * PAYLOAD_DTYPE.itemsize
        if n_bytes != expected:
            per_row = n_trials * samples * PAYLOAD_DTYPE.itemsize
            if n_bytes % PAYLOAD_DTYPE.itemsize == 0 and per_row and n_bytes % per_row == 0:
                raise DimensionMismatchError(
                    f"{where}: manifest declares C={channels} but payload holds "
                    f"{n_bytes // per_row} rows per trial"
                )
            if n_bytes < expected:
                raise TruncatedPayloadError(f"{where}: payload has {n_bytes} bytes, expected {expected}")
            raise DimensionMismatchError(f"{where}: payload has {n_bytes} bytes, expected {expected}")

        payload = np.fromfile(path, dtype=PAYLOAD_DTYPE)
        trials = payload.reshape(n_trials, channels, samples)
        try:
            return TrialSet(trials, np.asarray(labels))
        except ValueError as e:
            raise ManifestError(f"{where}: {e}") from e


def _safe_name(subject_id: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in subject_id)


def save_dataset(records: List[SubjectRecord], path: str) -> str:
    return DatasetManager(path).save(records)


def load_dataset(path: str) -> List[SubjectRecord]:
    return DatasetManager(path).load()
