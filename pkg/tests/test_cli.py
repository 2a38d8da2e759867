from __future__ import annotations

import io
import unittest
from pathlib import Path
from tempfile import TemporaryDirectory

import numpy as np
from rich.console import Console

from schemafactor.cli import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK, EXIT_TRANSFER, build_parser, main
from schemafactor.pamdp import build_task_spec
from schemafactor.schema import export_schema, init_schema

TINY_SETTINGS = """\
workers = 2
steps_per_worker = 6
minibatches = 2
epochs = 1
episode_budget = 10
hidden_sizes = 8
stop_at_threshold = no
"""


class CliTests(unittest.TestCase):
    def setUp(self) -> None:
        self._tmp = TemporaryDirectory()
        self.root = Path(self._tmp.name)
        self.output = io.StringIO()
        self.console = Console(file=self.output, width=200, color_system=None)

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def _config(self, name: str, body: str) -> Path:
        path = self.root / name
        path.write_text(body + TINY_SETTINGS)
        return path

    def _main(self, *argv: str) -> int:
        return main(list(argv), console=self.console)

    def test_parser_requires_a_command(self) -> None:
        with self.assertRaises(SystemExit):
            build_parser().parse_args([])

    def test_run_writes_results_and_is_reproducible(self) -> None:
        config = self._config("opening.cfg", "family = opening\nmode = schema\nseeds = 0\n")
        first = self.root / "first"
        second = self.root / "second"
        self.assertEqual(self._main("run", str(config), "--output", str(first)), EXIT_OK)
        self.assertEqual(self._main("run", str(config), "--output", str(second)), EXIT_OK)
        name = "opening-schema-low-dim"
        for suffix in ("-seed0.csv", "-seed0.ckpt", "-seed0.schema", "-aggregate.csv", ".svg"):
            self.assertTrue((first / name / f"{name}{suffix}").exists(), suffix)
        self.assertEqual(
            (first / name / f"{name}-seed0.csv").read_bytes(),
            (second / name / f"{name}-seed0.csv").read_bytes(),
        )
        self.assertIn("opening-schema-low-dim", self.output.getvalue())

    def test_seed_flag_replaces_config_seeds(self) -> None:
        config = self._config("lift.cfg", "family = lateral-lifting\nmode = oracle\nseeds = 0-4\n")
        out = self.root / "out"
        code = self._main("run", str(config), "--seed", "7", "--output", str(out))
        self.assertEqual(code, EXIT_OK)
        files = sorted(p.name for p in (out / "lateral-lifting-oracle-low-dim").glob("*.csv"))
        self.assertEqual(
            files,
            ["lateral-lifting-oracle-low-dim-aggregate.csv", "lateral-lifting-oracle-low-dim-seed7.csv"],
        )

    def test_incompatible_transfer_exits_with_transfer_code(self) -> None:
        export_schema(init_schema(build_task_spec("opening")), self.root / "opening.schema")
        config = self._config(
            "transfer.cfg",
            "family = rotating\nmode = transfer\nschema_path = opening.schema\n",
        )
        code = self._main("run", str(config), "--output", str(self.root / "out"))
        self.assertEqual(code, EXIT_TRANSFER)

    def test_bad_config_exits_with_config_code(self) -> None:
        config = self.root / "bad.cfg"
        config.write_text("family = opening\nmode = schema\ncolour = red\n")
        self.assertEqual(self._main("run", str(config)), EXIT_CONFIG)

    def test_missing_config_exits_with_config_code(self) -> None:
        self.assertEqual(self._main("run", str(self.root / "nope.cfg")), EXIT_CONFIG)

    def test_invalid_worker_override_fails(self) -> None:
        config = self._config("opening.cfg", "family = opening\nmode = schema\n")
        code = self._main("run", str(config), "--workers", "0", "--output", str(self.root))
        self.assertEqual(code, EXIT_FAILURE)

    def test_inspect_schema_prints_argmax(self) -> None:
        spec = build_task_spec("opening")
        values = np.zeros((3, 16))
        values[0, 1] = values[1, 11] = values[2, 15] = 2.0
        path = export_schema(init_schema(spec).with_values(values), self.root / "o.schema")
        self.assertEqual(self._main("inspect-schema", str(path)), EXIT_OK)
        text = self.output.getvalue()
        self.assertIn("side-grasp", text)
        self.assertIn("twist", text)
        self.assertIn("2.0000", text)

    def test_inspect_malformed_schema_fails(self) -> None:
        path = self.root / "broken.schema"
        path.write_text("T=3\n")
        self.assertEqual(self._main("inspect-schema", str(path)), EXIT_FAILURE)

    def test_export_schema_from_checkpoint(self) -> None:
        config = self._config("opening.cfg", "family = opening\nmode = schema\n")
        out = self.root / "out"
        self.assertEqual(self._main("run", str(config), "--output", str(out)), EXIT_OK)
        run_dir = out / "opening-schema-low-dim"
        exported = self.root / "exported.schema"
        code = self._main(
            "export-schema", str(run_dir / "opening-schema-low-dim-seed0.ckpt"), str(exported)
        )
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(
            exported.read_text(),
            (run_dir / "opening-schema-low-dim-seed0.schema").read_text(),
        )

    def test_export_from_oracle_checkpoint_fails(self) -> None:
        config = self._config("oracle.cfg", "family = picking\nmode = oracle\n")
        out = self.root / "out"
        self.assertEqual(self._main("run", str(config), "--output", str(out)), EXIT_OK)
        checkpoint = out / "picking-oracle-low-dim" / "picking-oracle-low-dim-seed0.ckpt"
        code = self._main("export-schema", str(checkpoint), str(self.root / "x.schema"))
        self.assertEqual(code, EXIT_FAILURE)
        self.assertFalse((self.root / "x.schema").exists())


if __name__ == "__main__":
    unittest.main()
