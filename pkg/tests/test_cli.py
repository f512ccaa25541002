"""
Tests for the symlio command line.
"""
import contextlib
import csv
import filecmp
import io
import json
import os
import shutil
import tempfile
import unittest

import yaml

import dataset
import symlio


class CliTest(unittest.TestCase):
    """
    Drive symlio.main with argument lists and inspect exit codes and outputs.
    """
    tmp_dirs = []

    def _mkdtemp(self) -> str:
        path = tempfile.mkdtemp(prefix="symlio-")
        self.tmp_dirs.append(path)
        return path

    def _config(self, data_dir: str, **changes) -> str:
        doc = {"dataset": data_dir, "noise": {"lidar": 0.02}}
        doc.update(changes)
        path = os.path.join(self._mkdtemp(), f"{changes.get('filter', 'eqf')}.yaml")
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(doc, f)
        return path

    @staticmethod
    def _main(*argv) -> tuple[int, str, str]:
        out, err = io.StringIO(), io.StringIO()
        with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
            code = symlio.main(list(argv))
        return code, out.getvalue(), err.getvalue()

    @classmethod
    def setUpClass(cls):
        cls.data_dir = tempfile.mkdtemp(prefix="symlio-")
        code, _, _ = cls._main("simulate", "--spec", "tests/files/static.yaml", "--out", cls.data_dir, "--seed", "2")
        assert code == symlio.EXIT_OK
        return super().setUpClass()

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.data_dir, ignore_errors=True)
        return super().tearDownClass()

    def tearDown(self) -> None:
        for path in self.tmp_dirs:
            shutil.rmtree(path, ignore_errors=True)
        return super().tearDown()

    def test_simulate(self):
        """simulate writes a loadable dataset and reports its size"""
        out = self._mkdtemp()
        code, stdout, _ = self._main("simulate", "--spec", "tests/files/static.yaml", "--out", out)
        self.assertEqual(code, symlio.EXIT_OK)
        self.assertIn("200 IMU samples and 20 scans", stdout)
        self.assertEqual(dataset.Dataset.load(out).meta["seed"], 0)

    def test_simulate_from_meta(self):
        """A dataset's meta.yaml regenerates the same dataset"""
        out = self._mkdtemp()
        code, _, _ = self._main("simulate", "--spec", os.path.join(self.data_dir, "meta.yaml"), "--out", out, "--seed", "2")
        self.assertEqual(code, symlio.EXIT_OK)
        _, mismatch, errors = filecmp.cmpfiles(self.data_dir, out, ["imu.csv", "truth.csv"], shallow=False)
        self.assertEqual((mismatch, errors), ([], []))
        self.assertEqual(dataset.Dataset.load(out).meta["spec"], dataset.Dataset.load(self.data_dir).meta["spec"])

    def test_run(self):
        """run writes the estimate, the report, the plot and optionally the map"""
        out = self._mkdtemp()
        code, stdout, _ = self._main("run", "--config", self._config(self.data_dir), "--out", out, "--timing", "--save-map")
        self.assertEqual(code, symlio.EXIT_OK)
        self.assertIn("ATE RMSE", stdout)
        self.assertIn("Time per scan", stdout)
        est = dataset.read_trajectory(os.path.join(out, symlio.EST_FILE))
        self.assertEqual(est.shape[0], 21)
        report = dataset.read_report(os.path.join(out, symlio.REPORT_FILE))
        self.assertLess(report["metrics"]["ate_rmse"], 1e-3)
        self.assertIn("ms_per_scan", report["metrics"])
        self.assertEqual(report["config"]["filter"], "eqf")
        self.assertTrue(os.path.getsize(os.path.join(out, symlio.PLOT_FILE)) > 0)
        self.assertTrue(os.path.exists(os.path.join(out, symlio.MAP_FILE)))

    def test_run_is_deterministic(self):
        """Repeated runs write byte-identical files"""
        config_path = self._config(self.data_dir, initial_perturbation={"attitude_deg": 1.0}, seed=3)
        a, b = self._mkdtemp(), self._mkdtemp()
        self.assertEqual(self._main("run", "--config", config_path, "--out", a)[0], symlio.EXIT_OK)
        self.assertEqual(self._main("run", "--config", config_path, "--out", b)[0], symlio.EXIT_OK)
        files = [symlio.EST_FILE, symlio.REPORT_FILE, symlio.PLOT_FILE]
        _, mismatch, errors = filecmp.cmpfiles(a, b, files, shallow=False)
        self.assertEqual((mismatch, errors), ([], []))

    def test_run_errors(self):
        """Bad configs and corrupt datasets exit with 2"""
        code, _, stderr = self._main("run", "--config", "tests/files/missing.yaml", "--out", self._mkdtemp())
        self.assertEqual(code, symlio.EXIT_ERROR)
        self.assertIn("Error:", stderr)

        broken = self._mkdtemp()
        shutil.copytree(self.data_dir, broken, dirs_exist_ok=True)
        with open(os.path.join(broken, dataset.IMU_FILE), "w", encoding="utf-8") as f:
            f.write("t,wx\n0.0,1.0\n")
        code, _, _ = self._main("run", "--config", self._config(broken), "--out", self._mkdtemp())
        self.assertEqual(code, symlio.EXIT_ERROR)

    def test_verify(self):
        """verify passes on a clean tree and fails with an injected fault"""
        code, stdout, _ = self._main("verify", "--filter", "s2-")
        self.assertEqual(code, symlio.EXIT_OK)
        self.assertIn("All 2 checks passed.", stdout)

        code, stdout, _ = self._main("verify", "--filter", "f-jacobian", "--inject-fault", "f-gravity-sign")
        self.assertEqual(code, symlio.EXIT_FAILED)
        self.assertIn("FAIL", stdout)

        code, _, _ = self._main("verify", "--filter", "no-such-check")
        self.assertEqual(code, symlio.EXIT_FAILED)

    def test_compare(self):
        """compare writes one row per configuration as CSV or JSON"""
        configs = [self._config(self.data_dir, filter="eqf"), self._config(self.data_dir, filter="ekf")]
        out = os.path.join(self._mkdtemp(), "table.csv")
        code, _, _ = self._main("compare", "--config", configs[0], "--config", configs[1], "--out", out)
        self.assertEqual(code, symlio.EXIT_OK)
        with open(out, "r", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        self.assertEqual([r["filter"] for r in rows], ["eqf", "ekf"])
        self.assertEqual([r["config"] for r in rows], ["eqf", "ekf"])

        out = os.path.join(self._mkdtemp(), "table.json")
        code, _, _ = self._main("compare", "--config", configs[0], "--config", configs[0], "--out", out)
        self.assertEqual(code, symlio.EXIT_OK)
        with open(out, "r", encoding="utf-8") as f:
            rows = json.load(f)
        self.assertEqual(rows[0], rows[1])

    def test_compare_errors(self):
        """compare needs two configurations over the same dataset"""
        other = self._mkdtemp()
        self._main("simulate", "--spec", "tests/files/static.yaml", "--out", other)
        out = os.path.join(self._mkdtemp(), "table.csv")
        code, _, stderr = self._main("compare", "--config", self._config(self.data_dir), "--config", self._config(other),
                                     "--out", out)
        self.assertEqual(code, symlio.EXIT_ERROR)
        self.assertIn("different datasets", stderr)
        self.assertFalse(os.path.exists(out))

        code, _, _ = self._main("compare", "--config", self._config(self.data_dir), "--out", out)
        self.assertEqual(code, symlio.EXIT_ERROR)

    def test_usage(self):
        """Missing arguments are usage errors"""
        with contextlib.redirect_stderr(io.StringIO()), self.assertRaises(SystemExit) as cm:
            symlio.main(["run"])
        self.assertEqual(cm.exception.code, 2)
