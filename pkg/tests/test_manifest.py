"""Run manifests: digests, naming, and stability across reruns."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from rare import __version__
from rare.manifest import build_manifest, digest_file, manifest_path, write_manifest


class TestDigest:
    def test_matches_hashlib_oracle(self, tmp_path):
        path = tmp_path / "blob.bin"
        payload = b"abc" * 5000 + b"\x00\xff"
        path.write_bytes(payload)
        assert digest_file(path) == hashlib.sha256(payload).hexdigest()

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty"
        path.write_bytes(b"")
        assert digest_file(path) == hashlib.sha256(b"").hexdigest()


class TestManifestPath:
    def test_appends_suffix_to_full_name(self):
        assert manifest_path("out/model.rare") == Path("out/model.rare.manifest.json")
        assert manifest_path("report.json") == Path("report.json.manifest.json")


class TestBuildAndWrite:
    def make_inputs(self, tmp_path):
        a = tmp_path / "a.txt"
        b = tmp_path / "b.txt"
        a.write_text("alpha", encoding="utf-8")
        b.write_text("beta", encoding="utf-8")
        return {"corpus": a, "queries": b}

    def test_fields(self, tmp_path):
        inputs = self.make_inputs(tmp_path)
        manifest = build_manifest(["rare", "train"], {"lr": 0.003}, {"seed": 7}, inputs)
        assert manifest.command == ["rare", "train"]
        assert manifest.config == {"lr": 0.003}
        assert manifest.seeds == {"seed": 7}
        assert manifest.artifact_version == __version__
        assert set(manifest.input_digests) == {"corpus", "queries"}
        assert manifest.input_digests["corpus"] == digest_file(inputs["corpus"])

    def test_stable_modulo_timestamp(self, tmp_path):
        inputs = self.make_inputs(tmp_path)
        a = build_manifest(["rare", "synth"], {"k": 5}, {"seed": 7}, inputs)
        b = build_manifest(["rare", "synth"], {"k": 5}, {"seed": 7}, inputs)
        da, db = a.__dict__.copy(), b.__dict__.copy()
        da.pop("created_at")
        db.pop("created_at")
        assert da == db

    def test_input_change_changes_digest(self, tmp_path):
        inputs = self.make_inputs(tmp_path)
        before = build_manifest(["c"], {}, {}, inputs).input_digests["corpus"]
        Path(inputs["corpus"]).write_text("alpha2", encoding="utf-8")
        after = build_manifest(["c"], {}, {}, inputs).input_digests["corpus"]
        assert before != after

    def test_write_next_to_artifact(self, tmp_path):
        inputs = self.make_inputs(tmp_path)
        manifest = build_manifest(["rare", "index"], {}, {"seed": 0}, inputs)
        artifact = tmp_path / "index.rfi"
        artifact.write_bytes(b"xx")
        out = write_manifest(manifest, artifact)
        assert out == tmp_path / "index.rfi.manifest.json"
        loaded = json.loads(out.read_text(encoding="utf-8"))
        assert loaded["command"] == ["rare", "index"]
        assert loaded["input_digests"]["queries"] == digest_file(inputs["queries"])
        assert "created_at" in loaded
