import io
import json

import numpy as np
import pytest
from PIL import Image

from conftest import blob_image
from pollenauth.cli import EXIT_ABORT, EXIT_EMPTY, EXIT_OK, EXIT_USAGE, main
from pollenauth.ensemble import load_dictionary
from pollenauth.evaluation import OUTLIER, ClusterSpec, read_instances_csv, synth_dataset
from pollenauth.evaluation import write_instances_csv

SMALL_BLOBS = [((15, 15), 6, (230, 180, 40)), ((50, 20), 6, (200, 90, 60)),
               ((30, 55), 7, (150, 200, 90))]


@pytest.fixture
def small_png(tmp_path):
    p = tmp_path / "loads.png"
    Image.fromarray(blob_image(SMALL_BLOBS, size=72)).save(p)
    return p


def _csv(path, label, mean, n=100, seed=0, std=3.0):
    data = synth_dataset([ClusterSpec(label, mean, std, n)], seed=seed)
    write_instances_csv(path, data)
    return path


A = (60.0, 40.0, 30.0)
B = (60.0, -20.0, -30.0)
C = (80.0, 10.0, 70.0)


@pytest.fixture
def two_class_dict(tmp_path):
    d = tmp_path / "d.json"
    assert main(["dict", "add", "A", "--train", str(_csv(tmp_path / "a.csv", "A", A)),
                 "--dict", str(d)]) == EXIT_OK
    assert main(["dict", "add", "B", "--train", str(_csv(tmp_path / "b.csv", "B", B, seed=1)),
                 "--dict", str(d)]) == EXIT_OK
    return d


def _test_csv(tmp_path, new_label, new_mean):
    data = synth_dataset([ClusterSpec("A", A, 3.0, 50), ClusterSpec("B", B, 3.0, 50),
                          ClusterSpec(new_label, new_mean, 3.0, 50)], seed=7)
    p = tmp_path / "test.csv"
    write_instances_csv(p, data)
    return p


# -- extract -----------------------------------------------------------------

def test_extract_blank_image(tmp_path, capsys):
    p = tmp_path / "blank.png"
    Image.new("RGB", (32, 32)).save(p)
    out = tmp_path / "o.csv"
    assert main(["extract", str(p), "-o", str(out)]) == EXIT_OK
    assert read_instances_csv(out) == []
    err = capsys.readouterr().err
    assert "warning" in err
    assert "hs=15 hr=20 min_area=20 min_component=50" in err


def test_extract_three_blobs(small_png, tmp_path, capsys):
    out = tmp_path / "o.csv"
    assert main(["extract", str(small_png), "-o", str(out), "--label", "Rubus",
                 "--debug-dir", str(tmp_path / "dbg")]) == EXIT_OK
    inst = read_instances_csv(out)
    assert len(inst) == 3
    assert all(i.label == "Rubus" for i in inst)
    assert "3 segments" in capsys.readouterr().err
    assert (tmp_path / "dbg" / "loads_mask.ppm").exists()
    assert (tmp_path / "dbg" / "loads_filtered.ppm").exists()
    assert (tmp_path / "dbg" / "loads_segments.csv").read_text().startswith("segment_id")


def test_extract_is_deterministic(small_png, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["extract", str(small_png), "-o", str(a)])
    main(["extract", str(small_png), "-o", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_extract_unreadable(tmp_path, capsys):
    p = tmp_path / "x.png"
    p.write_bytes(b"nope")
    assert main(["extract", str(p)]) == EXIT_USAGE
    assert "unreadable" in capsys.readouterr().err


def test_bad_flag_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["extract", "x.png", "--hs", "-1"])
    assert exc.value.code == EXIT_USAGE


# -- dict --------------------------------------------------------------------

def test_add_to_empty(tmp_path, capsys):
    d = tmp_path / "d.json"
    assert main(["dict", "add", "Rubus", "--train", str(_csv(tmp_path / "r.csv", "Rubus", A)),
                 "--dict", str(d)]) == EXIT_OK
    assert "no ambiguity check possible" in capsys.readouterr().out
    assert load_dictionary(d).class_names == ["Rubus"]


def test_add_without_test_warns(two_class_dict, tmp_path, capsys):
    c = _csv(tmp_path / "c.csv", "C", C, seed=2)
    assert main(["dict", "add", "C", "--train", str(c), "--dict", str(two_class_dict)]) == 0
    assert "skipped" in capsys.readouterr().err
    assert len(load_dictionary(two_class_dict)) == 3


def test_add_duplicate_interactive_yes(two_class_dict, tmp_path, monkeypatch, capsys):
    dup = _csv(tmp_path / "dup.csv", "Dup", A, seed=5)
    test = _test_csv(tmp_path, "Dup", A)
    monkeypatch.setattr("sys.stdin", io.StringIO("y\n"))
    rc = main(["dict", "add", "Dup", "--train", str(dup), "--test", str(test),
               "--dict", str(two_class_dict)])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "[y/N]" in out
    d = load_dictionary(two_class_dict)
    assert d.class_names == ["A", "B"]
    assert len(d.model("A")) == 200


def test_add_duplicate_interactive_default_keeps(two_class_dict, tmp_path, monkeypatch):
    dup = _csv(tmp_path / "dup.csv", "Dup", A, seed=5)
    test = _test_csv(tmp_path, "Dup", A)
    monkeypatch.setattr("sys.stdin", io.StringIO("\n"))
    assert main(["dict", "add", "Dup", "--train", str(dup), "--test", str(test),
                 "--dict", str(two_class_dict)]) == EXIT_OK
    assert load_dictionary(two_class_dict).class_names == ["A", "B", "Dup"]


def test_add_duplicate_abort(two_class_dict, tmp_path):
    before = two_class_dict.read_bytes()
    dup = _csv(tmp_path / "dup.csv", "Dup", A, seed=5)
    test = _test_csv(tmp_path, "Dup", A)
    rc = main(["dict", "add", "Dup", "--train", str(dup), "--test", str(test),
               "--dict", str(two_class_dict), "--non-interactive", "--on-ambiguity=abort"])
    assert rc == EXIT_ABORT
    assert two_class_dict.read_bytes() == before


def test_add_separated_class_not_flagged(two_class_dict, tmp_path, capsys):
    c = _csv(tmp_path / "c.csv", "C", C, seed=2)
    test = _test_csv(tmp_path, "C", C)
    rc = main(["dict", "add", "C", "--train", str(c), "--test", str(test),
               "--dict", str(two_class_dict), "--non-interactive"])
    assert rc == EXIT_OK
    assert "ambiguity detected" not in capsys.readouterr().out
    assert len(load_dictionary(two_class_dict)) == 3


def test_list_remove_merge(two_class_dict, capsys):
    assert main(["dict", "list", "--dict", str(two_class_dict), "--json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert [c["class_name"] for c in doc["classes"]] == ["A", "B"]
    assert [c["prototypes"] for c in doc["classes"]] == [100, 100]
    assert main(["dict", "list", "--dict", str(two_class_dict)]) == EXIT_OK
    assert "threshold" in capsys.readouterr().out
    assert main(["dict", "merge", "A", "B", "--dict", str(two_class_dict)]) == EXIT_OK
    assert load_dictionary(two_class_dict).class_names == ["A"]
    assert main(["dict", "remove", "Nope", "--dict", str(two_class_dict)]) == EXIT_USAGE
    assert main(["dict", "remove", "A", "--dict", str(two_class_dict)]) == EXIT_OK
    assert len(load_dictionary(two_class_dict)) == 0


def test_missing_dict_path(monkeypatch, capsys):
    monkeypatch.delenv("POLLEN_DICT", raising=False)
    assert main(["dict", "list"]) == EXIT_USAGE
    assert "POLLEN_DICT" in capsys.readouterr().err


# -- classify ----------------------------------------------------------------

def test_classify_csv_verdict(two_class_dict, tmp_path, capsys):
    p = _csv(tmp_path / "q.csv", None, A, n=5, seed=11)
    assert main(["classify", str(p), "--dict", str(two_class_dict)]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith("verdict: A")


def test_classify_far_cluster_is_outlier(two_class_dict, tmp_path, capsys):
    d = load_dictionary(two_class_dict)
    far = 10 * max(m.threshold for m in d.models)
    p = _csv(tmp_path / "q.csv", None, (A[0] + far + 40, A[1], A[2]), n=5, seed=12)
    assert main(["classify", str(p), "--dict", str(two_class_dict)]) == EXIT_OK
    assert capsys.readouterr().out.strip().endswith(f"verdict: {OUTLIER}")


def test_classify_json_schema(two_class_dict, tmp_path, capsys, monkeypatch):
    p = _csv(tmp_path / "q.csv", None, B, n=3, seed=13)
    monkeypatch.setenv("POLLEN_DICT", str(two_class_dict))
    assert main(["classify", str(p), "--json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"input", "verdict", "votes", "instances"}
    assert doc["verdict"] == "B"
    for inst in doc["instances"]:
        assert set(inst) == {"L", "u", "v", "weight", "predicted", "omega", "t_oc", "t_m",
                             "per_class_cf"}
        assert set(inst["per_class_cf"]) == {"A", "B"}
        assert inst["t_m"] <= inst["t_oc"]


def test_classify_blank_image_no_sample(two_class_dict, tmp_path, capsys):
    p = tmp_path / "blank.png"
    Image.new("RGB", (16, 16)).save(p)
    assert main(["classify", str(p), "--dict", str(two_class_dict)]) == EXIT_EMPTY
    assert "NO SAMPLE" in capsys.readouterr().out


def test_classify_image(tmp_path, small_png, capsys):
    # dictionary trained on the blob colors themselves
    inst = tmp_path / "i.csv"
    main(["extract", str(small_png), "-o", str(inst)])
    colors = np.array([i.color for i in read_instances_csv(inst)])
    d = tmp_path / "d.json"
    for k, c in enumerate(colors):
        train = tmp_path / f"t{k}.csv"
        _csv(train, f"P{k}", tuple(c), n=20, seed=k, std=0.5)
        main(["dict", "add", f"P{k}", "--train", str(train), "--dict", str(d)])
    capsys.readouterr()
    assert main(["classify", str(small_png), "--dict", str(d), "--json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert sorted(i["predicted"] for i in doc["instances"]) == ["P0", "P1", "P2"]


# -- evaluate and synth ------------------------------------------------------

def test_evaluate_both_conventions(two_class_dict, tmp_path, capsys):
    data = synth_dataset([ClusterSpec("A", A, 3.0, 40), ClusterSpec("B", B, 3.0, 40)], seed=3)
    data += synth_dataset([ClusterSpec(OUTLIER, (20.0, 90.0, 90.0), 3.0, 20)], seed=4)
    p = tmp_path / "v.csv"
    write_instances_csv(p, data)
    assert main(["evaluate", str(p), "--dict", str(two_class_dict),
                 "--convention", "both"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("convention") == 2
    header = out.splitlines()[0].split()
    assert header == ["A", "B", OUTLIER, "Total"]
    assert main(["evaluate", str(p), "--dict", str(two_class_dict),
                 "--convention", "standard", "--json"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["confusion"]["labels"] == ["A", "B", OUTLIER]
    assert np.trace(doc["confusion"]["counts"]) >= 95


def test_evaluate_unknown_label(two_class_dict, tmp_path):
    p = _csv(tmp_path / "x.csv", "Erica", C, n=3)
    assert main(["evaluate", str(p), "--dict", str(two_class_dict),
                 "--convention", "paper52"]) == EXIT_USAGE


def test_evaluate_requires_convention(two_class_dict, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "x.csv", "--dict", str(two_class_dict)])
    assert exc.value.code == EXIT_USAGE


def test_synth(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["--seed", "4", "synth", "-o", str(out), "--outliers", "10",
                 "--cluster", "X:50,0,0:2:30", "--box", "0,-50,-50:100,50,50"]) == EXIT_OK
    data = read_instances_csv(out)
    assert sum(i.label == "X" for i in data) == 30
    assert sum(i.label == OUTLIER for i in data) == 10
    again = tmp_path / "t.csv"
    main(["--seed", "4", "synth", "-o", str(again), "--outliers", "10",
          "--cluster", "X:50,0,0:2:30", "--box", "0,-50,-50:100,50,50"])
    assert out.read_bytes() == again.read_bytes()


def test_synth_defaults(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["synth", "-o", str(out)]) == EXIT_OK
    labels = [i.label for i in read_instances_csv(out)]
    assert labels.count(OUTLIER) == 400
    assert len(set(labels)) == 5


def test_synth_bad_cluster(capsys):
    assert main(["synth", "--cluster", "nonsense"]) == EXIT_USAGE
