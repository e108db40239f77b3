#!/usr/bin/env python3
"""Writes a tiny randomly initialised BERT to fixtures/tiny_bert/.

The directory holds config.json, vocab.txt and model.safetensors (float64),
plus expected.json with the last hidden states the reference implementation
computes for a few sentences. The Rust loader is tested against it.

Usage: python3 scripts/make_bert_fixture.py [--out fixtures/tiny_bert]
"""

import argparse
import json
import os

import torch
from safetensors.torch import save_file
from transformers import BertConfig, BertModel

VOCAB = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + sorted(
    set(
        "he denies intent to end his own life . she reports low mood and no longer enjoys music , "
        "history of abuse by her father patient was abused as a child".split()
    )
) + ["##s", "##ed", "##ing", "un", "##able"]

SENTENCES = [
    "he denies intent to end his own life .",
    "she reports low mood , and no longer enjoys music",
    "history of abuse by her father",
    "patient unable to sleep",
]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="fixtures/tiny_bert")
    args = ap.parse_args()
    torch.manual_seed(0)
    cfg = BertConfig(
        vocab_size=len(VOCAB),
        hidden_size=16,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=64,
        max_position_embeddings=32,
        type_vocab_size=2,
        hidden_act="gelu",
        layer_norm_eps=1e-12,
        hidden_dropout_prob=0.1,
        attention_probs_dropout_prob=0.1,
    )
    model = BertModel(cfg, add_pooling_layer=False).double().eval()
    # Random init leaves layer norms at identity; perturb them so the test
    # sees their parameters.
    with torch.no_grad():
        for name, p in model.named_parameters():
            if "LayerNorm" in name or name.endswith("bias"):
                p.add_(0.1 * torch.randn_like(p))
        model.embeddings.token_type_embeddings.weight.normal_(0, 0.02)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "vocab.txt"), "w") as f:
        f.write("\n".join(VOCAB) + "\n")
    cfg.to_json_file(os.path.join(args.out, "config.json"))
    tensors = {k: v.contiguous() for k, v in model.state_dict().items() if "position_ids" not in k}
    save_file(tensors, os.path.join(args.out, "model.safetensors"))

    index = {t: i for i, t in enumerate(VOCAB)}
    cases = []
    for s in SENTENCES:
        ids = [index["[CLS]"]]
        for w in s.split():
            if w in index:
                ids.append(index[w])
            elif w == "unable":
                ids += [index["un"], index["##able"]]
            else:
                ids.append(index["[UNK]"])
        ids.append(index["[SEP]"])
        with torch.no_grad():
            out = model(input_ids=torch.tensor([ids])).last_hidden_state[0]
        cases.append({"text": s, "ids": ids, "hidden": out.tolist()})
    with open(os.path.join(args.out, "expected.json"), "w") as f:
        json.dump({"cases": cases}, f)


if __name__ == "__main__":
    main()
