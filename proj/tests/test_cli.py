import argparse
import csv
import json
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

GPROC = None
FIXTURES = None


def run(*args, cwd):
    return subprocess.run([GPROC, *map(str, args)], cwd=cwd, capture_output=True, text=True, timeout=600)


def obj_coordinates(path):
    xs, ys = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("v "):
            _, x, y, _ = line.split()
            xs.append(round(float(x), 9))
            ys.append(round(float(y), 9))
    return sorted(xs), sorted(ys)


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        subprocess.run([FIXTURES, cls.dir], check=True)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_single_pass_then_evaluate(self):
        r = run("proceduralize", "-i", "facade.obj", "-o", "single.json", cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        r = run("evaluate", "single.json", "--json", cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(json.loads(r.stdout), {"alp": 1.0, "non": 2.0, "fan": 5.0, "rep": 31.0})

    def test_guided_with_trace(self):
        r = run("proceduralize", "-i", "facade.obj", "-o", "window.json", "--target", "alp=1,non=1,fan=6,rep=7",
                "--trace", "trace.csv", "--json", cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        summary = json.loads(r.stdout)
        self.assertEqual(summary["status"], "converged")
        with open(self.dir / "trace.csv") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual(len(rows), summary["evaluations"])
        self.assertIn("phi", rows[0])

    def test_budget_exhaustion_is_not_an_error(self):
        r = run("proceduralize", "-i", "facade.obj", "-o", "far.json", "--target", "alp=9,non=9", "--budget", "5",
                "--json", cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertEqual(json.loads(r.stdout)["status"], "budget-exhausted")

    def test_derive_with_override(self):
        self.assertEqual(run("proceduralize", "-i", "facade.obj", "-o", "g.json", cwd=self.dir).returncode, 0)
        grammar = json.loads((self.dir / "g.json").read_text())
        top = next(r for r in grammar["rules"] if r["lhs"] == grammar["axiom"])
        r = run("derive", "g.json", "--override", f"{top['id']}.rep=4x5", "-o", "edited.obj", "--labels",
                cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        self.assertIn("derived 101 instances", r.stdout)
        self.assertTrue((self.dir / "edited.mtl").exists())

    def test_partial_spacing_keeps_other_axes(self):
        self.assertEqual(run("proceduralize", "-i", "facade.obj", "-o", "s.json", cwd=self.dir).returncode, 0)
        grammar = json.loads((self.dir / "s.json").read_text())
        pane = next(r for r in grammar["rules"] if r["lhs"] != grammar["axiom"])
        self.assertEqual(run("derive", "s.json", "-o", "plain.obj", cwd=self.dir).returncode, 0)
        wider = pane["spacing"][0][0] + 0.1
        r = run("derive", "s.json", "--override", f"{pane['id']}.spacing={wider},0,0", "-o", "wide.obj", cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        plain, wide = obj_coordinates(self.dir / "plain.obj"), obj_coordinates(self.dir / "wide.obj")
        self.assertEqual(wide[1], plain[1])
        self.assertNotEqual(wide[0], plain[0])

    def test_usage_errors_exit_2(self):
        self.assertEqual(run("proceduralize", "-i", "missing.obj", cwd=self.dir).returncode, 2)
        self.assertEqual(run("proceduralize", "-i", "facade.obj", "--target", "zzz=1", cwd=self.dir).returncode, 2)
        self.assertEqual(run("proceduralize", "-i", "facade.obj", "--theta", "geo=abc", cwd=self.dir).returncode, 2)
        self.assertEqual(run("nonsense", cwd=self.dir).returncode, 2)
        self.assertEqual(run("complete", "-i", "cube.obj", "-o", "x.ply", cwd=self.dir).returncode, 2)

    def test_domain_errors_exit_1(self):
        (self.dir / "broken.obj").write_text("v 0 0\nf 1 2 3\n")
        r = run("proceduralize", "-i", "broken.obj", cwd=self.dir)
        self.assertEqual(r.returncode, 1)
        self.assertTrue(r.stderr.startswith("error: "))
        self.assertEqual(run("proceduralize", "-i", "facade.obj", "-o", "h.json", cwd=self.dir).returncode, 0)
        self.assertEqual(run("derive", "h.json", "--override", "nope.rep=2x2", cwd=self.dir).returncode, 1)

    def test_complete(self):
        r = run("complete", "-i", "ablation.ply", "-o", "filled.ply", "--stats", "stats.json", cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        stats = json.loads((self.dir / "stats.json").read_text())
        self.assertGreater(stats["pointsAfter"], stats["pointsBefore"])
        self.assertEqual(stats["coverageKept"], 1.0)

    def test_suggest(self):
        r = run("suggest", "-i", "facade.obj", "--samples", "3", "--budget", "30", "-o", "sug", cwd=self.dir)
        self.assertEqual(r.returncode, 0, r.stderr)
        index = json.loads((self.dir / "sug" / "suggestions.json").read_text())
        self.assertGreaterEqual(len(index), 1)
        for c in index:
            self.assertTrue((self.dir / "sug" / c["grammar"]).exists())


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--gproc", required=True)
    parser.add_argument("--fixtures", required=True)
    args, rest = parser.parse_known_args()
    GPROC, FIXTURES = args.gproc, args.fixtures
    unittest.main(argv=[sys.argv[0], *rest])
