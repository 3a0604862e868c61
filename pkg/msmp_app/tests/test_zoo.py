import json
import tempfile
from pathlib import Path

import networkx as nx
import numpy as np
from django.test import SimpleTestCase

from ..dataset import MANIFEST_NAME, list_samples, load_graph_file
from ..exceptions import GenerationError
from ..zoo import SHIPPED_MODELS, model_path
from ..zoo.generators import (
    GENERATORS,
    TopologyGenConfig,
    build_routenet_sample,
    label_gqnn_sample,
    label_shortest_path_sample,
    shortest_path_sample,
    split_of,
)
from ..zoo.oracles import interface_labels, link_delay, path_delay, routenet_delays, shortest_path_labels

SMALL = TopologyGenConfig(min_nodes=4, max_nodes=7, seed=11, count=10)


def _triangle() -> nx.Graph:
    G = nx.Graph()
    G.add_edge(0, 1, weight=1)
    G.add_edge(1, 2, weight=1)
    G.add_edge(0, 2, weight=3)
    return G


class OracleTest(SimpleTestCase):
    def test_link_delay(self):
        self.assertAlmostEqual(link_delay(10.0, 4.0), 1.0 / 6.0)
        with self.assertRaises(ValueError):
            link_delay(4.0, 4.0)

    def test_path_delay_adds_links(self):
        self.assertAlmostEqual(path_delay([10.0, 10.0], [4.0, 4.0]), 0.33333, places=5)

    def test_idle_path_delay_is_hops_over_capacity(self):
        graph = build_routenet_sample({(0, 1): 20.0, (1, 2): 20.0, (1, 0): 20.0, (2, 1): 20.0},
                                      [([0, 1, 2], 0.0)], capacity_scale=40.0, traffic_scale=5.0)
        self.assertAlmostEqual(graph.labels["delay"]["p0"], 2.0 / 20.0)
        self.assertEqual([e.position for e in graph.edges if e.target == "p0"], [0, 1])

    def test_triangle_prefers_two_light_hops(self):
        graph = label_shortest_path_sample(_triangle(), 0, 2, weight_scale=10.0)
        self.assertEqual(graph.labels["on_path"], {"e0_1": 1.0, "e0_2": 0.0, "e1_2": 1.0})
        self.assertEqual(shortest_path_labels(graph), graph.labels["on_path"])
        self.assertEqual(graph.node("e0_2").features["weight"], 0.3)
        self.assertEqual(graph.node("n0").features, {"is_source": 1.0, "is_target": 0.0})

    def test_two_node_topology(self):
        G = nx.Graph()
        G.add_edge(0, 1, weight=4)
        graph = label_shortest_path_sample(G, 1, 0, weight_scale=10.0)
        self.assertEqual(graph.labels["on_path"], {"e0_1": 1.0})
        gqnn = label_gqnn_sample(G, 1, 0, weight_scale=10.0)
        self.assertEqual(gqnn.labels["on_path"], {"i0_1": 0.0, "i1_0": 1.0})

    def test_gqnn_expansion(self):
        graph = label_gqnn_sample(_triangle(), 0, 2, weight_scale=10.0)
        self.assertEqual(graph.entity_nodes("router"), ("r0", "r1", "r2"))
        self.assertEqual(len(graph.entity_nodes("interface")), 6)
        self.assertEqual({k for k, v in graph.labels["on_path"].items() if v == 1.0}, {"i0_1", "i1_2"})
        self.assertEqual(interface_labels(graph), graph.labels["on_path"])


class GeneratedDatasetTest(SimpleTestCase):
    def setUp(self):
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.root = Path(tmp.name)

    def _generate(self, task: str, name: str, config: TopologyGenConfig = SMALL) -> Path:
        out = self.root / name
        GENERATORS[task](config, out)
        return out

    def test_splits_and_manifest(self):
        out = self._generate("routenet", "rn")
        self.assertEqual(len(list_samples(out / "train")), 8)
        self.assertEqual([p.name for p in list_samples(out / "validation")],
                         ["sample_00004.json", "sample_00009.json"])
        manifest = json.loads((out / MANIFEST_NAME).read_text())
        self.assertEqual(manifest["task"], "routenet")
        self.assertEqual(manifest["splits"], {"train": 8, "validation": 2})
        self.assertEqual(manifest["config"]["seed"], 11)
        self.assertEqual(manifest["feature_scales"], {"link": {"capacity": 40.0}, "path": {"traffic": 5.0}})
        self.assertIn("1 / (capacity - load)", manifest["oracle"])
        self.assertEqual([split_of(i) for i in range(5)], ["train"] * 4 + ["validation"])

    def test_routenet_labels_match_the_oracle(self):
        out = self._generate("routenet", "rn")
        for path in sorted(out.glob("*/*.json")):
            with self.subTest(sample=path.name):
                graph = load_graph_file(path)
                expected = routenet_delays(graph, SMALL.max_capacity, SMALL.max_traffic)
                self.assertEqual(set(expected), set(graph.labels["delay"]))
                for path_id, delay in expected.items():
                    self.assertTrue(np.isclose(graph.labels["delay"][path_id], delay, rtol=1e-9), path_id)

    def test_shortest_path_labels_match_the_oracle(self):
        out = self._generate("shortest_path", "sp")
        for path in sorted(out.glob("*/*.json")):
            with self.subTest(sample=path.name):
                graph = load_graph_file(path)
                self.assertEqual(shortest_path_labels(graph), graph.labels["on_path"])
                self.assertGreaterEqual(sum(graph.labels["on_path"].values()), 1.0)

    def test_gqnn_labels_match_the_oracle(self):
        out = self._generate("gqnn", "gq")
        for path in sorted(out.glob("*/*.json")):
            with self.subTest(sample=path.name):
                graph = load_graph_file(path)
                self.assertEqual(interface_labels(graph), graph.labels["on_path"])
                for interface in graph.entity_nodes("interface"):
                    owners = [e.target for e in graph.edges
                              if e.source == interface and graph.node(e.target).entity == "router"]
                    self.assertEqual(len(owners), 1)

    def test_same_seed_same_bytes(self):
        first = self._generate("gqnn", "one")
        second = self._generate("gqnn", "two")
        files = sorted(p.relative_to(first) for p in first.rglob("*.json"))
        self.assertEqual(files, sorted(p.relative_to(second) for p in second.rglob("*.json")))
        for relative in files:
            self.assertEqual((first / relative).read_bytes(), (second / relative).read_bytes(), str(relative))

    def test_samples_are_independent_of_count(self):
        out = self._generate("shortest_path", "sp")
        single = shortest_path_sample(SMALL, 6)
        self.assertEqual(load_graph_file(out / "train" / "sample_00006.json"), single)

    def test_seed_changes_samples(self):
        a = self._generate("routenet", "a")
        b = self._generate("routenet", "b", TopologyGenConfig(min_nodes=4, max_nodes=7, seed=12, count=10))
        self.assertNotEqual((a / "train" / "sample_00000.json").read_bytes(),
                            (b / "train" / "sample_00000.json").read_bytes())

    def test_invalid_config(self):
        for config in (TopologyGenConfig(min_nodes=3, max_nodes=2), TopologyGenConfig(edge_probability=0.0),
                       TopologyGenConfig(min_capacity=0.0), TopologyGenConfig(count=0)):
            with self.subTest(config=config), self.assertRaises(GenerationError):
                GENERATORS["routenet"](config, self.root / "never")
        self.assertFalse((self.root / "never").exists())


class ShippedModelsTest(SimpleTestCase):
    def test_each_model_file_exists(self):
        for name in SHIPPED_MODELS:
            self.assertTrue(model_path(name).is_file(), name)
        with self.assertRaises(KeyError):
            model_path("transformer")
