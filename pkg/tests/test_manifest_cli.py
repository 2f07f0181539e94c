import json

import pytest
from PIL import Image

from sparq.cli import EXIT_IO, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, main
from sparq.manifest import load_manifest

from conftest import awgn, gaussian_blur, textured_image

# Small pipeline flags so CLI runs stay fast; images are 48x48.
FAST_FLAGS = [
    "--patch-side", "5",
    "--atoms", "60",
    "--sparsity", "4",
    "--train-patches", "300",
    "--iterations", "4",
    "--threads", "2",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    """Two references with blur and noise distortion ladders plus scores."""
    root = tmp_path_factory.mktemp("dataset")
    rows = []
    for ref_idx, seed in enumerate((31, 32)):
        ref = textured_image(48, seed)
        ref_name = f"ref{ref_idx}.png"
        Image.fromarray(ref).save(root / ref_name)
        for level, sigma in enumerate((4, 9, 16, 26, 38, 55)):
            dis = awgn(ref, sigma, seed=seed * 100 + level)
            name = f"ref{ref_idx}_noise{level}.png"
            Image.fromarray(dis).save(root / name)
            rows.append(f"{ref_name},{name},{90 - 12 * level - ref_idx},noise")
        for level, radius in enumerate((0.6, 1.0, 1.6, 2.5, 4.0, 6.0)):
            dis = gaussian_blur(ref, radius)
            name = f"ref{ref_idx}_blur{level}.png"
            Image.fromarray(dis).save(root / name)
            rows.append(f"{ref_name},{name},{88 - 11 * level - ref_idx},blur")
    manifest = root / "manifest.csv"
    manifest.write_text("reference,distorted,score,tag\n" + "\n".join(rows) + "\n")
    return root, manifest


class TestLoadManifest:
    def test_loads_and_resolves_paths(self, dataset):
        root, manifest = dataset
        loaded = load_manifest(manifest)
        assert len(loaded.records) == 24
        assert loaded.name == "manifest"
        assert all(r.reference.is_file() and r.distorted.is_file() for r in loaded.records)
        assert len(loaded.references) == 2
        assert {r.tag for r in loaded.records} == {"noise", "blur"}

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("ref,dst,mos,kind\n")
        with pytest.raises(ValueError, match="header"):
            load_manifest(path)

    def test_missing_image(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("reference,distorted,score,tag\nnope.png,alsono.png,1.0,x\n")
        with pytest.raises(FileNotFoundError):
            load_manifest(path)

    def test_bad_score(self, dataset, tmp_path):
        root, _ = dataset
        path = tmp_path / "m.csv"
        path.write_text(
            "reference,distorted,score,tag\n"
            f"{root/'ref0.png'},{root/'ref0_noise0.png'},abc,x\n"
        )
        with pytest.raises(ValueError, match="score"):
            load_manifest(path)

    def test_empty_manifest(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("reference,distorted,score,tag\n")
        with pytest.raises(ValueError, match="no records"):
            load_manifest(path)


class TestTrainCommand:
    def test_trains_one_dictionary_per_reference(self, dataset, tmp_path, capsys):
        _, manifest = dataset
        cache = tmp_path / "cache"
        code = main(["train", "--manifest", str(manifest),
                     "--cache-dir", str(cache), *FAST_FLAGS])
        assert code == EXIT_OK
        files = sorted(cache.glob("*.spqd"))
        assert len(files) == 2
        out = capsys.readouterr().out
        assert out.count("trained") == 2

        # identical re-run is a full cache hit and rewrites nothing
        stamps = {f: f.stat().st_mtime_ns for f in files}
        code = main(["train", "--manifest", str(manifest),
                     "--cache-dir", str(cache), *FAST_FLAGS])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("cached") == 2
        assert {f: f.stat().st_mtime_ns for f in sorted(cache.glob("*.spqd"))} == stamps

    def test_parameter_change_retrains(self, dataset, tmp_path, capsys):
        root, _ = dataset
        cache = tmp_path / "cache"
        ref = str(root / "ref0.png")
        assert main(["train", ref, "--cache-dir", str(cache), *FAST_FLAGS]) == EXIT_OK
        capsys.readouterr()
        assert main(["train", ref, "--cache-dir", str(cache), "--seed", "9",
                     *FAST_FLAGS]) == EXIT_OK
        assert len(list(cache.glob("*.spqd"))) == 2
        assert "trained" in capsys.readouterr().out

    def test_no_images_is_usage_error(self, capsys):
        assert main(["train"]) == EXIT_USAGE
        assert "no reference images" in capsys.readouterr().err


class TestScoreCommand:
    def test_prints_six_decimal_score(self, dataset, tmp_path, capsys):
        root, _ = dataset
        code = main(["score", str(root / "ref0.png"), str(root / "ref0_noise0.png"),
                     "--cache-dir", str(tmp_path / "cache"), *FAST_FLAGS])
        assert code == EXIT_OK
        line = capsys.readouterr().out.strip()
        value = float(line)
        assert 0.0 < value < 1.0
        assert len(line.split(".")[1]) == 6

    def test_self_score_near_one(self, dataset, tmp_path, capsys):
        root, _ = dataset
        code = main(["score", str(root / "ref0.png"), str(root / "ref0.png"),
                     "--cache-dir", str(tmp_path / "cache"), *FAST_FLAGS])
        assert code == EXIT_OK
        value = float(capsys.readouterr().out.strip())
        assert 0.99 < value < 1.0

    def test_with_psnr_adds_line(self, dataset, tmp_path, capsys):
        root, _ = dataset
        code = main(["score", str(root / "ref0.png"), str(root / "ref0_noise2.png"),
                     "--cache-dir", str(tmp_path / "cache"), "--with-psnr", *FAST_FLAGS])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2
        assert 5.0 < float(lines[1]) < 60.0

    def test_json_detail(self, dataset, tmp_path, capsys):
        root, _ = dataset
        code = main(["score", str(root / "ref0.png"), str(root / "ref0_blur1.png"),
                     "--cache-dir", str(tmp_path / "cache"), "--format", "json",
                     "--with-psnr", *FAST_FLAGS])
        assert code == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert 0.0 < doc["sparq"] < 1.0
        assert doc["q"] == len(doc["patches"])
        assert {"row", "col", "score"} <= set(doc["patches"][0])
        assert "psnr" in doc

    def test_dimension_mismatch_fails_cleanly(self, dataset, tmp_path, capsys):
        root, _ = dataset
        other = tmp_path / "small.png"
        Image.fromarray(textured_image(32, 40)).save(other)
        code = main(["score", str(root / "ref0.png"), str(other),
                     "--cache-dir", str(tmp_path / "cache"), *FAST_FLAGS])
        assert code == EXIT_USAGE
        assert "dimensions" in capsys.readouterr().err

    def test_missing_file_is_io_error(self, tmp_path, capsys):
        code = main(["score", str(tmp_path / "absent.png"), str(tmp_path / "b.png"),
                     *FAST_FLAGS])
        assert code == EXIT_IO

    def test_cached_dictionary_gives_identical_score(self, dataset, tmp_path, capsys):
        root, _ = dataset
        cache = tmp_path / "cache"
        argv = ["score", str(root / "ref1.png"), str(root / "ref1_noise3.png"),
                "--cache-dir", str(cache), *FAST_FLAGS]
        assert main(argv) == EXIT_OK
        fresh = capsys.readouterr().out
        assert main(argv) == EXIT_OK  # second run loads from cache
        assert capsys.readouterr().out == fresh

    def test_corrupt_cache_entry_triggers_retrain(self, dataset, tmp_path, capsys):
        root, _ = dataset
        cache = tmp_path / "cache"
        argv = ["score", str(root / "ref0.png"), str(root / "ref0_blur0.png"),
                "--cache-dir", str(cache), *FAST_FLAGS]
        assert main(argv) == EXIT_OK
        fresh = capsys.readouterr().out
        [entry] = cache.glob("*.spqd")
        entry.write_bytes(entry.read_bytes()[:40])
        assert main(argv) == EXIT_OK
        captured = capsys.readouterr()
        assert captured.out == fresh
        assert "retraining" in captured.err


class TestEvaluateCommand:
    def test_csv_report_structure_and_determinism(self, dataset, tmp_path, capsys):
        _, manifest = dataset
        argv = ["evaluate", "--manifest", str(manifest),
                "--cache-dir", str(tmp_path / "cache"), *FAST_FLAGS]
        assert main(argv) == EXIT_OK
        first = capsys.readouterr().out
        lines = first.strip().splitlines()
        assert lines[0] == "metric,tag,count,srocc,krocc,cc,mae,rms"
        tags = [line.split(",")[1] for line in lines[1:]]
        assert tags == ["blur", "noise", "overall"]
        counts = [int(line.split(",")[2]) for line in lines[1:]]
        assert counts == [12, 12, 24]
        overall_srocc = float(lines[3].split(",")[3])
        assert overall_srocc > 0.7  # scores were built to track distortion level

        assert main(argv) == EXIT_OK
        assert capsys.readouterr().out == first  # byte-identical re-run

    def test_json_report(self, dataset, tmp_path, capsys):
        _, manifest = dataset
        assert main(["evaluate", "--manifest", str(manifest),
                     "--cache-dir", str(tmp_path / "cache"), "--format", "json",
                     "--with-psnr", *FAST_FLAGS]) == EXIT_OK
        doc = json.loads(capsys.readouterr().out)
        assert set(doc["metrics"]) == {"sparq", "psnr"}
        assert doc["metrics"]["sparq"]["overall"]["count"] == 24
        assert doc["failures"] == []

    def test_lower_better_flips_rank_sign(self, dataset, tmp_path, capsys):
        _, manifest = dataset
        argv = ["evaluate", "--manifest", str(manifest),
                "--cache-dir", str(tmp_path / "cache"), "--format", "json", *FAST_FLAGS]
        assert main(argv) == EXIT_OK
        plain = json.loads(capsys.readouterr().out)
        assert main(argv + ["--lower-better"]) == EXIT_OK
        flipped = json.loads(capsys.readouterr().out)
        a = plain["metrics"]["sparq"]["overall"]["srocc"]
        b = flipped["metrics"]["sparq"]["overall"]["srocc"]
        assert a == pytest.approx(-b, abs=1e-9)

    def test_single_record_fails_cleanly(self, dataset, tmp_path, capsys):
        root, _ = dataset
        single = tmp_path / "single.csv"
        single.write_text(
            "reference,distorted,score,tag\n"
            f"{root/'ref0.png'},{root/'ref0_noise0.png'},50,x\n"
        )
        code = main(["evaluate", "--manifest", str(single),
                     "--cache-dir", str(tmp_path / "cache"), *FAST_FLAGS])
        assert code == EXIT_PARTIAL
        captured = capsys.readouterr()
        assert "overall statistics unavailable" in captured.err

    def test_missing_manifest_is_io_error(self, tmp_path, capsys):
        assert main(["evaluate", "--manifest", str(tmp_path / "none.csv"),
                     *FAST_FLAGS]) == EXIT_IO


class TestSweepCommand:
    def test_two_fractions_curve(self, dataset, tmp_path, capsys):
        _, manifest = dataset
        code = main(["sweep", "--manifest", str(manifest),
                     "--fractions", "0.15,1.0",
                     "--cache-dir", str(tmp_path / "cache"), *FAST_FLAGS])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "fraction,srocc"
        assert len(lines) == 3
        fractions = [float(line.split(",")[0]) for line in lines[1:]]
        assert fractions == [0.15, 1.0]
        for line in lines[1:]:
            assert -1.0 <= float(line.split(",")[1]) <= 1.0

    def test_single_fraction_rejected(self, dataset, capsys):
        _, manifest = dataset
        code = main(["sweep", "--manifest", str(manifest), "--fractions", "0.15"])
        assert code == EXIT_USAGE
        assert "at least two" in capsys.readouterr().err

    def test_duplicate_fractions_deduplicated_with_warning(self, dataset, tmp_path, capsys):
        _, manifest = dataset
        with pytest.warns(UserWarning, match="duplicate"):
            code = main(["sweep", "--manifest", str(manifest),
                         "--fractions", "0.5,0.5",
                         "--cache-dir", str(tmp_path / "cache"), *FAST_FLAGS])
        assert code == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2  # header plus the single deduplicated point

    def test_out_of_range_fraction_rejected(self, dataset, capsys):
        _, manifest = dataset
        code = main(["sweep", "--manifest", str(manifest), "--fractions", "0.2,1.5"])
        assert code == EXIT_USAGE


class TestUsageErrors:
    def test_unknown_command(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == EXIT_USAGE

    def test_bad_flag_value(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["score", "a.png", "b.png", "--atoms", "many"])
        assert err.value.code == EXIT_USAGE
