"""End-to-end checks of the twins command-line tool.

Run with TWINS_CLI pointing at the built binary.
"""

import json
import math
import os
import struct
import subprocess
import tempfile
import unittest
from pathlib import Path

CLI = os.environ.get("TWINS_CLI", "twins")


def run(*args, check=True):
    proc = subprocess.run([CLI, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} exited {proc.returncode}\n{proc.stderr}")
    return proc


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def read_checkpoint(path):
    data = Path(path).read_bytes()
    nl = data.index(b"\n")
    header = json.loads(data[:nl])
    body = data[nl + 1:]
    tensors, off = {}, 0
    for t in header["tensors"]:
        n = math.prod(t["shape"])
        tensors[t["name"]] = list(struct.unpack_from(f"<{n}d", body, off))
        off += 8 * n
    return header, tensors


def write_checkpoint(path, header, tensors):
    with open(path, "wb") as f:
        f.write(json.dumps(header).encode() + b"\n")
        for t in header["tensors"]:
            f.write(struct.pack(f"<{len(tensors[t['name']])}d", *tensors[t["name"]]))


def categories(catalog_rows):
    item_cat = {r["id"]: r["features"][0] for r in catalog_rows if r["kind"] == "item"}
    users = {r["id"]: r["browsed_items"] for r in catalog_rows if r["kind"] == "user"}
    anchors = {r["id"]: r["broadcast_items"] for r in catalog_rows if r["kind"] == "anchor"}
    return item_cat, users, anchors


def pearson(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        run("generate", "--users", 100, "--anchors", 20, "--items", 500, "--seed", 7, "--out", cls.dir / "data")
        cls.data = ["--catalog", cls.dir / "data/catalog.jsonl", "--pairs", cls.dir / "data/pairs.jsonl"]
        cls.small = ["--dim", 4, "--batch-size", 100, "--quiet"]

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_generate_is_byte_identical(self):
        run("generate", "--users", 100, "--anchors", 20, "--items", 500, "--seed", 7, "--out", self.dir / "again")
        for name in ("catalog.jsonl", "pairs.jsonl"):
            self.assertEqual((self.dir / "data" / name).read_bytes(), (self.dir / "again" / name).read_bytes())

    def test_missing_required_flag_prints_usage(self):
        proc = run("generate", "--users", 5, check=False)
        self.assertEqual(proc.returncode, 2)
        self.assertIn("--out", proc.stderr)
        self.assertEqual(run(check=False).returncode, 2)
        self.assertEqual(run("train", "--bogus", 1, check=False).returncode, 2)

    def test_signal_strength_controls_label_correlation(self):
        def correlation(signal):
            out = self.dir / f"sig{signal}"
            run("generate", "--num-pairs", 4000, "--signal", signal, "--seed", 3, "--out", out)
            item_cat, users, anchors = categories(read_jsonl(out / "catalog.jsonl"))
            js, ys = [], []
            for p in read_jsonl(out / "pairs.jsonl"):
                cu = {item_cat[i] for i in users[p["user"]]}
                ca = {item_cat[i] for i in anchors[p["anchor"]]}
                js.append(len(cu & ca) / len(cu | ca) if cu | ca else 0.0)
                ys.append(p["label"])
            return pearson(js, ys)

        strong, none = correlation(0.9), correlation(0.0)
        self.assertGreater(strong, 0.2)
        self.assertLess(abs(none), 0.05)

    def test_train_records_variant_and_is_deterministic(self):
        csvs = []
        for k in range(2):
            ck, csv = self.dir / f"det{k}.ckpt", self.dir / f"det{k}.csv"
            run("train", *self.data, *self.small, "--epochs", 3, "--variant", "no-item", "--threads", 1,
                "--checkpoint", ck, "--metrics", csv)
            csvs.append(csv.read_bytes())
        self.assertEqual(csvs[0], csvs[1])
        rows = csvs[0].decode().strip().split("\n")
        self.assertEqual(rows[0], "epoch,lr,train_loss,val_auc,val_acc,val_logloss,wall_seconds")
        self.assertEqual(len(rows), 4)
        header, _ = read_checkpoint(self.dir / "det0.ckpt")
        self.assertEqual(header["config"]["variant"], "no-item")

    def test_zero_epochs_writes_initial_checkpoint_and_no_rows(self):
        ck, csv = self.dir / "zero.ckpt", self.dir / "zero.csv"
        run("train", *self.data, *self.small, "--epochs", 0, "--checkpoint", ck, "--metrics", csv)
        self.assertEqual(csv.read_text().strip().count("\n"), 0)
        header, tensors = read_checkpoint(ck)
        self.assertEqual(header["version"], 1)
        self.assertTrue(any(v != 0.0 for v in tensors["pnn.user"]))

    def test_divergence_exits_with_numeric_code(self):
        proc = run("train", *self.data, *self.small, "--lr-start", 1e200, "--lr-end", 1e100, "--epochs", 2,
                   "--checkpoint", self.dir / "nan.ckpt", check=False)
        self.assertEqual(proc.returncode, 3)
        self.assertIn("epoch", proc.stderr)

    def test_eval_of_zero_mlp_is_majority_rate(self):
        ck = self.dir / "z.ckpt"
        run("train", *self.data, *self.small, "--epochs", 0, "--checkpoint", ck)
        header, tensors = read_checkpoint(ck)
        for name in tensors:
            if name.startswith("mlp."):
                tensors[name] = [0.0] * len(tensors[name])
        write_checkpoint(ck, header, tensors)
        out = [json.loads(run("eval", *self.data, "--checkpoint", ck, "--on", "all").stdout) for _ in range(2)]
        self.assertEqual(out[0], out[1])
        labels = [p["label"] for p in read_jsonl(self.dir / "data/pairs.jsonl")]
        self.assertAlmostEqual(out[0]["acc"], sum(labels) / len(labels), places=12)
        self.assertAlmostEqual(out[0]["logloss"], math.log(2), places=12)

    def test_co_retrieval_matches_full_on_short_shared_histories(self):
        out = self.dir / "shared"
        run("generate", "--categories", 1, "--history-min", 1, "--history-max", 6, "--num-pairs", 300, "--seed", 2,
            "--out", out)
        data = ["--catalog", out / "catalog.jsonl", "--pairs", out / "pairs.jsonl"]
        ck = self.dir / "shared.ckpt"
        run("train", *data, *self.small, "--epochs", 2, "--k", 10, "--checkpoint", ck)
        full = json.loads(run("eval", *data, "--checkpoint", ck).stdout)
        co = json.loads(run("eval", *data, "--checkpoint", ck, "--variant", "co-retrieval").stdout)
        for key in ("auc", "acc", "logloss"):
            self.assertEqual(full[key], co[key])

    def test_prebuilt_index_gives_same_report(self):
        ck = self.dir / "idx.ckpt"
        run("train", *self.data, *self.small, "--epochs", 1, "--variant", "co-retrieval", "--checkpoint", ck)
        run("index", "--catalog", self.dir / "data/catalog.jsonl", "--out", self.dir / "idx")
        a = run("eval", *self.data, "--checkpoint", ck).stdout
        b = run("eval", *self.data, "--checkpoint", ck, "--index-dir", self.dir / "idx").stdout
        self.assertEqual(a, b)

    def test_score_and_explain(self):
        ck = self.dir / "score.ckpt"
        run("train", *self.data, *self.small, "--epochs", 1, "--k", 3, "--checkpoint", ck)
        rows = read_jsonl(self.dir / "data/catalog.jsonl")
        item_cat, users, anchors = categories(rows)
        cat = ["--catalog", self.dir / "data/catalog.jsonl", "--checkpoint", ck]
        for user, anchor in [(0, 0), (5, 3), (42, 17)]:
            lines = run("score", *cat, "--user", user, "--anchor", anchor, "--explain").stdout.split("\n")
            self.assertTrue(0.0 < float(lines[0]) < 1.0)
            common = sorted({item_cat[i] for i in users[user]} & {item_cat[i] for i in anchors[anchor]})
            nu = sum(item_cat[i] in common for i in users[user])
            na = sum(item_cat[i] in common for i in anchors[anchor])
            self.assertEqual(lines[1], f"pair_budget {min(nu, 3) * min(na, 3)}")
            self.assertEqual(lines[2].split()[1:], [str(c) for c in common])
        proc = run("score", *cat, "--user", 99999, "--anchor", 0, check=False)
        self.assertEqual(proc.returncode, 2)
        self.assertIn("99999", proc.stderr)

    def test_config_file_round_trips_and_flags_win(self):
        args = ["train", *self.data, "--checkpoint", self.dir / "cfg.ckpt", "--epochs", 2, "--variant", "no-anchor",
                "--split", "0.5,0.25,0.25", "--literal-product", "--lr-start", 0.05]
        printed = run(*args, "--print-config").stdout
        cfg = self.dir / "run.cfg"
        cfg.write_text("# saved run\n" + printed)
        self.assertEqual(run("train", "--config", cfg, "--print-config").stdout, printed)
        override = run("train", "--config", cfg, "--epochs", 5, "--print-config").stdout
        self.assertIn("epochs=5\n", override)
        self.assertEqual(override.replace("epochs=5", "epochs=2"), printed)
        cfg.write_text(printed + "no-such-key=1\n")
        self.assertEqual(run("train", "--config", cfg, check=False).returncode, 2)

    def test_ingest_reports_malformed_lines(self):
        raw = self.dir / "raw"
        raw.mkdir(exist_ok=True)
        (raw / "catalog.jsonl").write_text(
            '{"kind":"item","id":1,"features":["sports","x"]}\n'
            "not json\n"
            '{"kind":"user","id":1,"features":["f"],"browsed_items":[1],"browsed_anchors":[]}\n'
            '{"kind":"anchor","id":1,"features":["g"],"broadcast_items":[1]}\n')
        (raw / "pairs.jsonl").write_text('{"user":1,"anchor":1,"label":1}\n{"user":1}\n')
        proc = run("ingest", "--catalog", raw / "catalog.jsonl", "--pairs", raw / "pairs.jsonl", "--out",
                   self.dir / "clean", "--vocab", self.dir / "vocab.txt")
        summary = json.loads(proc.stdout)
        self.assertEqual(summary["rejected_catalog_lines"], 1)
        self.assertEqual(summary["rejected_pair_lines"], 1)
        self.assertIn(":2:", proc.stderr)
        self.assertEqual(len(read_jsonl(self.dir / "clean/pairs.jsonl")), 1)
        (raw / "pairs.jsonl").write_text('{"user":1,"anchor":9,"label":1}\n')
        self.assertEqual(run("ingest", "--catalog", raw / "catalog.jsonl", "--pairs", raw / "pairs.jsonl", "--out",
                             self.dir / "clean2", check=False).returncode, 2)


if __name__ == "__main__":
    unittest.main()
