#!/usr/bin/env python3
"""Regenerate the committed fixture files under fixtures/.

Deterministic: running this twice produces byte-identical files. The
synthetic base-to-new fixture is the one the acceptance suite trains on;
regenerating it after changing encoder/synthesis code invalidates pinned
accuracies, so rerun the acceptance suite afterwards.
"""

import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from sept.manifest import SyntheticSpec, generate_synthetic, generate_synthetic_neighbors
from sept.margins import compute_margin_table
from sept.prompting import TemplateEmbedder, TemplatePool
from sept.trainer import EncoderConfig, TrainConfig
from sept.losses import AblationFlags

FIXTURES = ROOT / "fixtures"

ENCODER = EncoderConfig(dim=32, hidden=64, vocab=4096, max_len=32, seed=4,
                        embedding_scale=3.0)

CONFIG = TrainConfig(
    lr=0.05, momentum=0.9, epochs=300, batch_size=None, shots=16,
    lam=3.0, mu=0.0, tau=0.2, m_ctx=5, n_neighbors=5, seed=0,
    flags=AblationFlags(), ce_reduction="mean", margin_mode="fixed_prefix",
    kg_mode="single", context_init="template", encoder=ENCODER)

TARGET_NAMES = ("cricket", "organ", "doorbell", "stream",
                "anvil", "flute", "rooster", "gravel")


def main():
    FIXTURES.mkdir(exist_ok=True)
    encoder = ENCODER.build()
    pool = TemplatePool.packaged()

    spec = SyntheticSpec(k=8, samples_per_class=36, dim=32, sigma=0.35, seed=2)
    manifest = generate_synthetic(spec, encoder, name="synthetic-b2n")
    manifest.save(FIXTURES / "synthetic_b2n.manifest.json")

    neighbors = generate_synthetic_neighbors(manifest.classes, n=5, seed=1)
    neighbors.save(FIXTURES / "synthetic_b2n.neighbors.json", manifest.classes)

    margins = compute_margin_table(TemplateEmbedder(encoder), manifest.classes,
                                   neighbors, pool, mode=CONFIG.margin_mode,
                                   encoder_seed=encoder.seed)
    margins.save(FIXTURES / "synthetic_b2n.margins.json")

    with open(FIXTURES / "synthetic_b2n.config.json", "w", encoding="utf-8") as f:
        json.dump(CONFIG.to_json(), f, sort_keys=True, indent=1)

    target_spec = SyntheticSpec(k=8, samples_per_class=24, dim=32, sigma=0.35, seed=5)
    target = generate_synthetic(target_spec, encoder, names=TARGET_NAMES,
                                name="synthetic-transfer-target")
    target.save(FIXTURES / "synthetic_target.manifest.json")

    # offline neighbor fixture for the LLM client path (verbatim contents)
    offline = {name: [f"{name} variant {i}" for i in range(1, 4)]
               for name in manifest.classes.names}
    with open(FIXTURES / "offline_neighbors.json", "w", encoding="utf-8") as f:
        json.dump(offline, f, indent=1, sort_keys=True)

    print("fixtures written to", FIXTURES)


if __name__ == "__main__":
    main()
