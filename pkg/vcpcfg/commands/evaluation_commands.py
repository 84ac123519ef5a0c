import logging
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

from vcpcfg.data.trees import BracketedTree, load_gold_trees
from vcpcfg.errors import DataError
from vcpcfg.evaluation.baselines import BASELINES, baseline_tree
from vcpcfg.evaluation.metrics import SpanSet, all_labels, self_f1, spans_from_tree
from vcpcfg.evaluation.report import EvalReport, build_report, render, summarize_runs, write_csvs
from vcpcfg.utils.command_decorator import argument, command
from vcpcfg.utils.config import RunConfig

logger = logging.getLogger(__name__)

BASELINE_NAMES = {"left": "left-branching", "right": "right-branching", "random": "random-trees"}


def baseline_spans(golds: Sequence[BracketedTree], mode: str, seed: int) -> List[SpanSet]:
    """Baseline bracketings over the gold sentences; one random stream for the whole file."""
    rng = np.random.default_rng(seed)
    out = []
    for gold in golds:
        if gold.n < 2:
            out.append(SpanSet.of((), gold.n))
        else:
            out.append(spans_from_tree(baseline_tree(gold.n, mode, rng=rng)))
    return out


def _system_names(paths: Sequence[Path]) -> List[str]:
    names: List[str] = []
    for path in paths:
        name = Path(path).stem
        if name in names:
            name = str(path)
        names.append(name)
    return names


class EvaluationCommands:
    """
    EVALUATION_COMMANDS: unlabelled bracketing scores against gold trees.
    """

    @command(help="score predicted trees (and baselines) against gold trees")
    @argument("--gold", type=Path, default=None, help="gold trees (default: config key 'gold_trees')")
    @argument("--pred", type=Path, action="append", default=[], help="predicted trees (repeatable, one per run)")
    @argument("--baseline", choices=BASELINES, action="append", default=[], help="add a baseline row")
    @argument("--all-labels", action="store_true", help="report recall for every gold label")
    def evaluate(self, config: RunConfig, args) -> int:
        """
        Print corpus F1, sentence F1 and per-label recall for every system and
        write report.csv, label_recall.csv and recall_by_length.csv to
        output_dir. With two or more prediction files the self-F1 across them
        and the run mean / standard deviation are printed too.
        """
        if args.gold is not None:
            config = config.model_copy(update={"gold_trees": args.gold})
        config.require_existing("gold_trees")
        for path in args.pred:
            if not Path(path).exists():
                raise DataError(f"prediction file does not exist: {path}")
        if not args.pred and not args.baseline:
            raise DataError("nothing to evaluate: give --pred and/or --baseline")

        golds = load_gold_trees(config.gold_trees)
        labels = config.label_list()
        if args.all_labels:
            labels += [label for label in all_labels(golds) if label not in labels]

        runs: Dict[str, List[SpanSet]] = {}
        for name, path in zip(_system_names(args.pred), args.pred):
            trees = load_gold_trees(path)
            if len(trees) != len(golds):
                raise DataError(f"{path}: {len(trees)} predicted trees for {len(golds)} gold trees")
            runs[name] = [spans_from_tree(t) for t in trees]

        reports: List[EvalReport] = [build_report(name, preds, golds, labels) for name, preds in runs.items()]
        reports += [build_report(BASELINE_NAMES[mode], baseline_spans(golds, mode, config.seed), golds, labels)
                    for mode in args.baseline]

        consistency = self_f1(list(runs.values())) if len(runs) >= 2 else None
        print(render(reports, consistency))
        if len(runs) >= 2:
            print("\nacross runs:")
            print(summarize_runs(reports[:len(runs)]).to_string(float_format=lambda x: f"{x:.3f}"))
        write_csvs(reports, Path(config.output_dir))
        return 0
