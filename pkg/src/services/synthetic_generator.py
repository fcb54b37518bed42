"""Synthetic MMKG pairs with a known ground-truth alignment."""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Set, Tuple

import numpy as np

from src.models.config import GeneratorConfig
from src.models.kg import MMKG, Pair

logger = logging.getLogger(__name__)


@dataclass
class SyntheticPair:
    kg1: MMKG
    kg2: MMKG
    alignments: List[Pair]
    log: Dict[str, float] = field(default_factory=dict)

    def __iter__(self):
        return iter((self.kg1, self.kg2, self.alignments))


class SyntheticPairGenerator:
    """KG2 is a relabelled copy of KG1 under a hidden permutation, then perturbed.

    Perturbations: a fraction of KG2 triples get a new tail, KG2 dense features get
    additive Gaussian noise, and a fraction of visual vectors go missing.
    """

    def __init__(self, config: GeneratorConfig, seed: int):
        config.validate()
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def generate(self) -> SyntheticPair:
        cfg = self.config
        n = cfg.n_entities

        triples = self._sample_triples()
        attrs = self._sample_attributes()
        visual = self.rng.normal(size=(n, cfg.d_v)) if cfg.d_v else None
        surface = self.rng.normal(size=(n, cfg.d_s)) if cfg.d_s else None
        missing_1 = self._choose_fraction(cfg.visual_missing_1)
        missing_2 = self._choose_fraction(cfg.visual_missing)

        kg1 = MMKG(
            entities={i: f"e{i}" for i in range(n)},
            rel_triples=sorted(triples),
            attr_assignments=sorted(attrs),
            visual={i: visual[i] for i in range(n) if visual is not None and i not in missing_1},
            surface={i: surface[i] for i in range(n)} if surface is not None else {},
            name="kg1",
        )

        perm = self.rng.permutation(n)
        mapped = [(int(perm[h]), r, int(perm[t])) for h, r, t in triples]
        mapped, rewired = self._rewire(mapped)
        noisy_visual = self._perturb(visual)
        noisy_surface = self._perturb(surface)
        kg2 = MMKG(
            entities={j: f"x{j}" for j in range(n)},
            rel_triples=sorted(mapped),
            attr_assignments=sorted((int(perm[e]), a) for e, a in attrs),
            visual={int(perm[i]): noisy_visual[i] for i in range(n)
                    if noisy_visual is not None and int(perm[i]) not in missing_2},
            surface={int(perm[i]): noisy_surface[i] for i in range(n)} if noisy_surface is not None else {},
            name="kg2",
        )
        kg1.validate()
        kg2.validate()

        alignments = [(i, int(perm[i])) for i in range(n)]
        log = {
            "seed": self.seed,
            "triples": len(triples),
            "rewired": rewired,
            "rewired_fraction": rewired / len(triples) if triples else 0.0,
            "visual_missing_kg1": len(missing_1) if visual is not None else n,
            "visual_missing_kg2": len(missing_2) if visual is not None else n,
        }
        logger.info(f"Generated synthetic pair: {n} entities/side, {len(triples)} triples, "
                    f"{rewired} rewired, {log['visual_missing_kg2']} KG2 visual rows missing")
        return SyntheticPair(kg1, kg2, alignments, log)

    def _sample_triples(self) -> List[Tuple[int, str, int]]:
        cfg = self.config
        n = cfg.n_entities
        target = max(1, int(round(n * cfg.avg_degree / 2)))
        seen: Set[Tuple[int, str, int]] = set()
        triples = []
        while len(triples) < target:
            heads = self.rng.integers(n, size=target)
            tails = self.rng.integers(n, size=target)
            rels = self.rng.integers(cfg.n_relations, size=target)
            for h, t, r in zip(heads, tails, rels):
                triple = (int(h), f"r{int(r)}", int(t))
                if h == t or triple in seen:
                    continue
                seen.add(triple)
                triples.append(triple)
                if len(triples) == target:
                    break
        return triples

    def _sample_attributes(self) -> List[Tuple[int, str]]:
        cfg = self.config
        counts = self.rng.poisson(cfg.attrs_per_entity, size=cfg.n_entities)
        attrs = []
        for eid, count in enumerate(counts):
            chosen = self.rng.choice(cfg.n_attributes, size=min(int(count), cfg.n_attributes), replace=False)
            attrs.extend((eid, f"a{int(k)}") for k in sorted(chosen))
        return attrs

    def _choose_fraction(self, rate: float) -> Set[int]:
        count = int(round(rate * self.config.n_entities))
        return {int(i) for i in self.rng.choice(self.config.n_entities, size=count, replace=False)}

    def _rewire(self, triples: List[Tuple[int, str, int]]) -> Tuple[List[Tuple[int, str, int]], int]:
        count = int(round(self.config.rewire_rate * len(triples)))
        if count == 0:
            return triples, 0
        n = self.config.n_entities
        existing = set(triples)
        result = list(triples)
        rewired = 0
        for idx in self.rng.choice(len(triples), size=count, replace=False):
            head, rel, tail = result[idx]
            for _ in range(32):
                new_tail = int(self.rng.integers(n))
                candidate = (head, rel, new_tail)
                if new_tail not in (head, tail) and candidate not in existing:
                    existing.discard(result[idx])
                    existing.add(candidate)
                    result[idx] = candidate
                    rewired += 1
                    break
        return result, rewired

    def _perturb(self, features):
        if features is None:
            return None
        if self.config.feature_noise == 0:
            return features.copy()
        return features + self.rng.normal(scale=self.config.feature_noise, size=features.shape)


def generate_synthetic_pair(cfg: GeneratorConfig, seed: int) -> SyntheticPair:
    """Generate (KG1, KG2, ground-truth pairs); the result unpacks as a 3-tuple."""
    return SyntheticPairGenerator(cfg, seed).generate()
