import logging
import sys
from pathlib import Path
from typing import List

import numpy as np
import pandas as pd

from vcpcfg.core.checkpoint import load_checkpoint, save_checkpoint
from vcpcfg.core.gradcheck import GRADCHECK_SCOPES, micro_batch_check
from vcpcfg.core.model import ModelParams, parse_sentence
from vcpcfg.core.trainer import Trainer, TrainingCorpus
from vcpcfg.data.corpus import load_corpus, read_captions, write_captions
from vcpcfg.data.features import save_features
from vcpcfg.data.synthetic import default_toy_grammar, generate_synthetic
from vcpcfg.data.trees import parse_tree_to_bracketed, to_bracketed, write_gold_trees
from vcpcfg.data.vocab import Vocabulary, build_vocab
from vcpcfg.errors import ConfigError
from vcpcfg.utils.command_decorator import argument, command
from vcpcfg.utils.config import RunConfig
from vcpcfg.utils.logging_setup import add_file_handler

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4


def output_file(config: RunConfig, name: str) -> Path:
    """
    Resolve ``name`` inside the output directory.
    Anything that would land outside it is refused.
    """
    root = Path(config.output_dir).resolve()
    target = (root / name).resolve()
    if root != target and root not in target.parents:
        raise ConfigError(f"output '{name}' is outside output_dir {config.output_dir}")
    target.parent.mkdir(parents=True, exist_ok=True)
    return target


class TrainingCommands:
    """
    TRAINING_COMMANDS: model fitting, parsing, gradient checks and synthetic data.
    Every file written goes under ``output_dir``.
    """

    def _check_paths(self, config: RunConfig) -> None:
        config.require_existing("captions", "valid_captions")
        if config.grounded:
            config.require_existing("features", "valid_features")
        for key in ("alignment_index", "valid_alignment_index"):
            if getattr(config, key) is not None:
                config.require_existing(key)

    @command(help="train a grammar and write model.ckpt plus epoch_log.jsonl")
    def train(self, config: RunConfig, args) -> int:
        """
        Train on ``captions`` (and ``features`` in the grounded modes), select
        the epoch with the best validation criterion, and save it.
        """
        self._check_paths(config)
        handler = add_file_handler(output_file(config, "train.log"))
        try:
            grounded = config.grounded
            train_ex, table = load_corpus(config.captions, config.features if grounded else None,
                                          config.captions_per_image, config.alignment_index)
            valid_ex, valid_table = load_corpus(config.valid_captions, config.valid_features if grounded else None,
                                                config.captions_per_image, config.valid_alignment_index)
            vocab = build_vocab([ex.tokens for ex in train_ex], config.vocab_cap)
            train_ex = [ex.encode(vocab) for ex in train_ex]
            valid_ex = [ex.encode(vocab) for ex in valid_ex]
            image_dim = table.dim if table is not None else 1

            metadata = {**config.model_dump(mode="json"), "vocab_size": len(vocab), "image_dim": image_dim}
            trainer = Trainer(config.train_config(), config.topology(len(vocab)),
                              config.encoder_config(len(vocab), image_dim),
                              TrainingCorpus(train_ex, valid_ex, table, valid_table),
                              epoch_log=output_file(config, "epoch_log.jsonl"),
                              metadata=metadata, vocab=vocab.tokens())
            best = trainer.run()
            checkpoint_path = output_file(config, "model.ckpt")
            save_checkpoint(checkpoint_path, best)
            logger.info("[TRAIN] best epoch %d saved to %s", best.epoch, checkpoint_path)

            summary = pd.DataFrame(best.history).set_index("epoch")
            print(summary.to_string(float_format=lambda x: f"{x:.4f}"))
            print(f"\nbest epoch: {best.epoch}  checkpoint: {checkpoint_path}")
        finally:
            logging.getLogger().removeHandler(handler)
            handler.close()
        return 0

    @command(help="parse raw captions with a trained checkpoint")
    @argument("--checkpoint", type=Path, default=None, help="checkpoint file (default: config key 'checkpoint')")
    @argument("--input", type=Path, default=None, help="captions to parse (default: config key 'captions')")
    @argument("--output", default="parses.txt", help="file name inside output_dir")
    def parse(self, config: RunConfig, args) -> int:
        """
        Write one bracketed tree per input line. The latent vector is fixed to
        the posterior mean, so no image features are read.
        """
        overrides = {k: v for k, v in (("checkpoint", args.checkpoint), ("captions", args.input)) if v is not None}
        config = config.model_copy(update=overrides)
        config.require_existing("checkpoint", "captions")

        ckpt = load_checkpoint(config.checkpoint)
        model = ModelParams.restore(ckpt.params, ckpt.config)
        vocab = Vocabulary(ckpt.vocab)
        lines = read_captions(config.captions)

        trees: List[str] = []
        short = 0
        for tokens in lines:
            if len(tokens) < 2:
                short += 1
                trees.append(to_bracketed(tokens, {}))
                continue
            tree = parse_sentence(model, vocab.encode(tokens))
            trees.append(parse_tree_to_bracketed(tree, tokens))
        if short:
            logger.info("[PARSE] %d lines shorter than two tokens written without structure", short)

        path = output_file(config, args.output)
        write_gold_trees(path, trees)
        logger.info("[PARSE] wrote %d trees to %s", len(trees), path)
        return 0

    @command(help="finite-difference check of the training gradients")
    @argument("--scope", choices=sorted(GRADCHECK_SCOPES), action="append", default=None,
              help="objective to check (repeatable; default: all)")
    @argument("--max-coords", type=int, default=12, help="coordinates checked per parameter")
    def gradcheck(self, config: RunConfig, args) -> int:
        """
        Compare reverse-mode gradients to central differences on a seeded
        micro-batch and print the worst relative error per parameter group.
        Exits 0 only if every error is below 1e-4.
        """
        scopes = args.scope or list(GRADCHECK_SCOPES)
        worst_overall = 0.0
        for scope in scopes:
            groups = micro_batch_check(scope, seed=config.seed, max_coords=args.max_coords)
            for group in sorted(groups):
                status = "ok" if groups[group] < GRADCHECK_TOLERANCE else "FAIL"
                print(f"{scope:<9} {group:<10} {groups[group]:.3e}  {status}")
                worst_overall = max(worst_overall, groups[group])
        print(f"worst relative error: {worst_overall:.3e}")
        return 0 if worst_overall < GRADCHECK_TOLERANCE else 1

    @command(help="write a synthetic grounded corpus from the toy grammar")
    @argument("--size", type=int, default=2000, help="training sentences")
    @argument("--valid-size", type=int, default=200)
    @argument("--test-size", type=int, default=200)
    @argument("--noise-scale", type=float, default=0.1)
    @argument("--image-dim", type=int, default=32)
    def synth(self, config: RunConfig, args) -> int:
        """
        Sample train/valid/test splits with one image feature per caption.
        Writes <split>.txt, <split>.feat and <split>.trees plus synth.cfg, a
        config file that trains on the result.
        """
        grammar = default_toy_grammar()
        sizes = {"train": args.size, "valid": args.valid_size, "test": args.test_size}
        seeds = np.random.SeedSequence(config.seed).generate_state(len(sizes))
        for (split, size), seed in zip(sizes.items(), seeds):
            corpus = generate_synthetic(grammar, size, int(seed), noise_scale=args.noise_scale,
                                        image_dim=args.image_dim, max_length=config.max_sentence_length)
            write_captions(output_file(config, f"{split}.txt"), corpus.sentences)
            save_features(output_file(config, f"{split}.feat"), corpus.features.values)
            write_gold_trees(output_file(config, f"{split}.trees"), corpus.bracketed)
            logger.info("[SYNTH] %s: %d sentences", split, size)

        root = Path(config.output_dir)
        settings = [
            f"captions = {root / 'train.txt'}",
            f"features = {root / 'train.feat'}",
            f"valid_captions = {root / 'valid.txt'}",
            f"valid_features = {root / 'valid.feat'}",
            f"gold_trees = {root / 'test.trees'}",
            "captions_per_image = 1",
            f"num_nonterminals = {len(grammar.nonterminals)}",
            f"num_preterminals = {len(grammar.preterminals)}",
            "labels = NP,VP,PP,NBAR,VBAR",
        ]
        output_file(config, "synth.cfg").write_text("\n".join(settings) + "\n", encoding="utf-8")
        sys.stderr.write(f"  Synthetic corpus written to {root}\n")
        return 0
