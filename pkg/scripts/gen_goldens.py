#!/usr/bin/env python3
"""Pin golden regression values into tests/golden/.

Run once after intentional changes to the encoder, synthesis, or training
pipeline, then review the diff; tests compare against these files at tight
tolerances.
"""

import json
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from sept.encoder import TextEncoder, context_prompt
from sept.manifest import SyntheticSpec, generate_synthetic, generate_synthetic_neighbors
from sept.margins import compute_margin_table
from sept.prompting import ContextMatrix, PromptSpace, TemplateEmbedder, TemplatePool
from sept.trainer import EncoderConfig, TrainConfig, sample_few_shot, train
from sept import evaluation

GOLDEN = ROOT / "tests" / "golden"


def main():
    GOLDEN.mkdir(exist_ok=True)

    # fixed-seed encode vector
    enc = TextEncoder(dim=8, hidden=16, vocab_size=512, max_len=16, seed=42)
    z = enc.encode(context_prompt(2, enc.tokenize("a")), np.zeros((2, 8)))
    (GOLDEN / "encode_seed42.json").write_text(
        json.dumps({"vector": z.tolist()}, indent=1))

    # class/neighbor/template embeddings on the toy space (seed 7 encoder)
    enc7 = TextEncoder(dim=8, hidden=16, vocab_size=512, max_len=16, seed=7)
    from sept.prompting import ClassSet, NeighborSet
    classes = ClassSet.from_names(["dog", "rain", "siren", "piano"])
    neighbors = NeighborSet.build([
        ["dog sound", "barking dog", "dog noise"],
        ["rain sound", "steady rain", "rain noise"],
        ["siren sound", "wailing siren", "siren noise"],
        ["piano sound", "piano chord", "piano noise"],
    ])
    space = PromptSpace(enc7, classes, m_ctx=2, neighbors=neighbors)
    ctx = ContextMatrix.initialize(2, 8, seed=7)
    doc = {
        "class_0": space.class_embedding(0, ctx).tolist(),
        "neighbor_1_2": space.neighbor_embedding(1, 2, ctx).tolist(),
        "template_dog": space.template_embedding("this is a sound of {class}",
                                                 "dog").tolist(),
    }
    (GOLDEN / "prompt_embeddings_seed7.json").write_text(json.dumps(doc, indent=1))

    # few-shot index pinning on the committed fixture manifest
    from sept.manifest import DatasetManifest
    manifest = DatasetManifest.load(ROOT / "fixtures" / "synthetic_b2n.manifest.json")
    few = sample_few_shot(manifest, shots=16, seed=0)
    (GOLDEN / "few_shot_seed0.json").write_text(json.dumps(
        {str(k): list(v) for k, v in few.indices_by_class.items()}, indent=1))

    # short training run: pinned final loss and context hash
    enc_cfg = EncoderConfig(dim=32, hidden=64, seed=4, embedding_scale=3.0)
    config = TrainConfig.from_json(json.loads(
        (ROOT / "fixtures" / "synthetic_b2n.config.json").read_text()))
    short = config.replace(epochs=5, seed=1)
    from sept.prompting import NeighborSet as NS
    fixture_neighbors = NS.load(ROOT / "fixtures" / "synthetic_b2n.neighbors.json",
                                manifest.classes)
    from sept.margins import MarginTable
    margins = MarginTable.load(ROOT / "fixtures" / "synthetic_b2n.margins.json")
    pool = TemplatePool.packaged()
    trained = train(manifest, short, fixture_neighbors, margins, pool)
    report = evaluation.evaluate_base_to_new(trained, manifest)
    (GOLDEN / "train_short.json").write_text(json.dumps({
        "final_loss": trained.loss_history[-1],
        "loss_epoch0": trained.loss_history[0],
        "report": report,
    }, indent=1))

    # zero-shot accuracy pinning: sigma=0.3, k=8, seed 3 manifest
    enc_z = EncoderConfig(dim=32, hidden=64, seed=0).build()
    zspec = SyntheticSpec(k=8, samples_per_class=24, dim=32, sigma=0.3, seed=3)
    zmanifest = generate_synthetic(zspec, enc_z)
    zreport = evaluation.zero_shot_report(zmanifest, enc_z, pool, tau=0.01)
    (GOLDEN / "zero_shot_sigma03.json").write_text(json.dumps(zreport, indent=1))

    print("golden files written to", GOLDEN)


if __name__ == "__main__":
    main()
