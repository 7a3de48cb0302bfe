"""End-to-end checks of the mammofed command line against a served network.

Usage: test_cli.py <path to mammofed binary>
"""

import json
import os
import signal
import socket
import subprocess
import sys
import tempfile
import unittest
import urllib.request

BINARY = None


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def patient(pid, age, children=0):
    return {"entity": "patient", "patient_id": pid, "age_years": age, "children_count": children, "hrt": age > 55}


def jsonl(records):
    return "".join(json.dumps(r) + "\n" for r in records)


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dir = tempfile.TemporaryDirectory()
        d = cls.dir.name
        a_records = [patient(f"A{i}", 40 + i, i % 4) for i in range(12)]
        a_records += [
            {"entity": "study", "study_id": "AS1", "patient_id": "A0", "study_date": "2000-01-01",
             "diagnosis": "cancer", "diagnosed_laterality": "left", "therapy_outcome": "successful"},
            {"entity": "study", "study_id": "AS2", "patient_id": "A0", "study_date": "2004-01-01",
             "diagnosis": "cancer", "diagnosed_laterality": "right"},
        ]
        with open(os.path.join(d, "a.jsonl"), "w") as f:
            f.write(jsonl(a_records))
        with open(os.path.join(d, "b.jsonl"), "w") as f:
            f.write(jsonl([patient(f"B{i}", 45 + i) for i in range(5)]))
        cls.ports = {"A": free_port(), "B": free_port()}
        cls.config = os.path.join(d, "net.json")
        with open(cls.config, "w") as f:
            json.dump({"token": "clitoken", "sites": [
                {"site_id": "A", "http_port": cls.ports["A"], "seed_data": "a.jsonl"},
                {"site_id": "B", "http_port": cls.ports["B"], "seed_data": "b.jsonl"},
            ]}, f)
        cls.server = subprocess.Popen([BINARY, "serve", "--config", cls.config], stdout=subprocess.PIPE,
                                      stderr=subprocess.PIPE, text=True)
        for _ in range(2):
            line = cls.server.stdout.readline()
            if not line:
                raise RuntimeError("serve exited: " + cls.server.stderr.read())
            info = json.loads(line)
            assert info["http_port"] == cls.ports[info["site"]]

    @classmethod
    def tearDownClass(cls):
        cls.server.send_signal(signal.SIGTERM)
        try:
            cls.server.wait(timeout=10)
        except subprocess.TimeoutExpired:
            cls.server.kill()
        cls.server.stdout.close()
        cls.server.stderr.close()
        cls.dir.cleanup()

    def run_cli(self, *args, env_extra=None):
        env = dict(os.environ, MAMMOFED_CONFIG=self.config)
        env.pop("MAMMOFED_TOKEN", None)
        env.update(env_extra or {})
        return subprocess.run([BINARY, *args], capture_output=True, text=True, env=env, timeout=60)

    def post(self, site, path, body):
        req = urllib.request.Request(f"http://127.0.0.1:{self.ports[site]}{path}", data=json.dumps(body).encode(),
                                     headers={"Authorization": "Bearer clitoken", "Content-Type": "application/json"})
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.read().decode()

    def test_query_prints_the_same_document_as_the_api(self):
        dsl = "find patients where age between 49 and 51"
        out = self.run_cli("query", "--site", "A", "--bypass-cache", dsl)
        self.assertEqual(out.returncode, 0, out.stderr)
        self.assertEqual(out.stdout, self.post("A", "/query", {"dsl": dsl, "bypass_cache": True}))
        self.assertTrue(out.stdout.startswith("<resultset "))
        self.assertIn('id="B4"', out.stdout)

    def test_json_format_lists_records(self):
        out = self.run_cli("query", "--site", "B", "--format", "json", "find patients local where age under 47")
        self.assertEqual(out.returncode, 0, out.stderr)
        doc = json.loads(out.stdout)
        self.assertEqual([r["id"] for r in doc["records"]], ["B0", "B1"])
        self.assertEqual(doc["missing"], [])

    def test_explicit_url_and_env_token(self):
        out = self.run_cli("cache", "stats", "--site", "A", "--url", f"127.0.0.1:{self.ports['A']}",
                           env_extra={"MAMMOFED_TOKEN": "clitoken"})
        self.assertEqual(out.returncode, 0, out.stderr)
        self.assertIn("hits", json.loads(out.stdout))
        bad = self.run_cli("cache", "stats", "--site", "A", env_extra={"MAMMOFED_TOKEN": "wrong"})
        self.assertEqual(bad.returncode, 1)

    def test_bad_query_is_a_user_error(self):
        out = self.run_cli("query", "--site", "A", "find patients where shoe size over 3")
        self.assertEqual(out.returncode, 1)
        self.assertIn("shoe size", out.stderr)

    def test_unknown_subcommand(self):
        self.assertEqual(self.run_cli("frobnicate").returncode, 1)

    def test_unreachable_node(self):
        out = self.run_cli("query", "--site", "A", "--url", f"127.0.0.1:{free_port()}", "find patients where age over 1")
        self.assertEqual(out.returncode, 2)

    def test_offline_allocation_replay(self):
        out = self.run_cli("suite", "qc-allocate", "--site", "A", "--seed", "42", "--count", "9")
        self.assertEqual(out.returncode, 0, out.stderr)
        doc = json.loads(out.stdout)
        self.assertEqual(sorted(doc["pair_counts"].values()), [3, 3, 3])
        self.assertEqual(len(doc["assignments"]), 9)
        self.assertEqual(doc["seed"], 42)

    def test_contralateral_suite(self):
        out = self.run_cli("suite", "contralateral", "--site", "A", "--format", "json")
        self.assertEqual(out.returncode, 0, out.stderr)
        doc = json.loads(out.stdout)
        self.assertIn("A0", json.dumps(doc))

    def test_similar_excludes_reference(self):
        out = self.run_cli("similar", "--site", "A", "--patient", "A5", "--format", "json")
        self.assertEqual(out.returncode, 0, out.stderr)
        ids = [r["id"] for r in json.loads(out.stdout)["records"]]
        self.assertNotIn("A5", ids)
        self.assertIn("A4", ids)

    def test_ingest_reports_counts(self):
        path = os.path.join(self.dir.name, "extra.jsonl")
        with open(path, "w") as f:
            f.write(jsonl([patient("B99", 70)]) + "{broken\n")
        out = self.run_cli("ingest", "--site", "B", "--file", path)
        self.assertEqual(out.returncode, 0, out.stderr)
        doc = json.loads(out.stdout)
        self.assertEqual(doc["accepted"], 1)
        self.assertEqual(len(doc["rejected"]), 1)

    def test_sim_run(self):
        d = self.dir.name
        config = os.path.join(d, "sim.json")
        script = os.path.join(d, "script.json")
        transcript = os.path.join(d, "transcript.jsonl")
        with open(config, "w") as f:
            json.dump({"sites": [{"site_id": "X", "seed_data": "a.jsonl"}, {"site_id": "Y", "seed_data": "b.jsonl"}]}, f)
        with open(script, "w") as f:
            json.dump({"steps": [
                {"op": "query", "site": "X", "dsl": "find patients where age over 50"},
                {"op": "assert", "query_frames": 1, "missing": []},
                {"op": "fault", "site": "Y", "action": "down"},
                {"op": "query", "site": "X", "dsl": "find patients where age over 50", "bypass_cache": True},
                {"op": "assert", "missing": ["Y"]},
            ]}, f)
        out = self.run_cli("sim", "run", "--config", config, "--script", script, "--transcript", transcript)
        self.assertEqual(out.returncode, 0, out.stdout + out.stderr)
        with open(transcript) as f:
            frames = [json.loads(line) for line in f]
        self.assertIn("QUERY", [fr["type"] for fr in frames])

        with open(script, "w") as f:
            json.dump([{"op": "query", "site": "X", "dsl": "find patients where age over 50"},
                       {"op": "assert", "rows": 0}], f)
        failed = self.run_cli("sim", "run", "--config", config, "--script", script)
        self.assertEqual(failed.returncode, 1)
        self.assertIn("step 1", failed.stdout + failed.stderr)


if __name__ == "__main__":
    BINARY = os.path.abspath(sys.argv.pop(1))
    unittest.main(verbosity=2)
