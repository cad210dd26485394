"""
UAT script for fuselab.

Walks one GAN-Fusion translation run through the workflow by calling the
node functions directly, so each phase can be inspected, then evaluates the
best checkpoint, draws a short word-drop curve and trains the concat and
Auto-Fusion baselines for comparison.
"""

import os
import tempfile

from fuselab.config import ExperimentConfig
from fuselab.data import gen_toy_translation, write_corpus
from fuselab.graph import initial_state
from fuselab.harness import ablate, evaluate, train
from fuselab.nodes import completion_node, preparation_node, train_epoch_node, validation_node
from fuselab.routing import route_after_preparation, route_after_train, route_after_validation
from fuselab.state import FusionKind, Task

ACCUMULATING = ('phase_history', 'records', 'loss_log', 'errors')


def print_separator():
    print("\n" + "="*70 + "\n")


def print_phase(number, total, name):
    print(f"[{number}/{total}] {name}")
    print("-" * 70)


def merge(state, update):
    merged = {**state, **update}
    for key in ACCUMULATING:
        if key in update:
            merged[key] = list(state[key]) + list(update[key])
    return merged


def main():
    print_separator()
    print("FUSELAB - USER ACCEPTANCE TEST")
    print("GAN-Fusion on the toy translation corpus, one node at a time")
    print_separator()

    workdir = tempfile.mkdtemp(prefix="fuselab-uat-")
    data_dir = os.path.join(workdir, "data")

    # Phase 1: Data
    print_phase(1, 7, "SYNTHETIC DATA")
    corpus = gen_toy_translation(300, seed=7, ambiguity_rate=0.25)
    paths = write_corpus(data_dir, corpus)
    for split, path in paths.items():
        print(f"  - {split}: {len(corpus.splits[split])} records -> {path}")

    config = ExperimentConfig(
        task=Task.TRANSLATION, fusion=FusionKind.GAN, data_dir=data_dir,
        output_root=os.path.join(workdir, "runs"), run_name="uat",
        latent_v=16, latent_s=16, latent_t=16, d_fuse=16, text_embedding=16,
        decoder_hidden=32, disc_hidden=16, epochs=3, seed=7,
    ).validate()

    # Phase 2: Preparation
    print_separator()
    print_phase(2, 7, "PREPARATION")
    state = initial_state(config)
    state = merge(state, preparation_node(state))
    if state['errors']:
        print(f"[X] Preparation failed: {state['errors'][-1]}")
        return
    session = state['session']
    print(f"Run directory: {state['run_dir']}")
    print(f"Source vocabulary: {len(session.source_vocab)} tokens")
    print(f"Target vocabulary: {len(session.target_vocab)} tokens")
    print(f"Discriminators: {len(session.network.fusion.discriminators())}")
    print(f"Routing Decision: {route_after_preparation(state)}")

    # Phase 3: Training loop
    print_separator()
    print_phase(3, 7, "TRAINING")
    route = route_after_preparation(state)
    while route == "train_epoch":
        state = merge(state, train_epoch_node(state))
        last = state['loss_log'][-1]
        print(f"Epoch {state['epoch']}: j_fusion={last['j_fusion']:.4f} j_task={last['j_task']:.4f}")
        if route_after_train(state) != "validation":
            break
        state = merge(state, validation_node(state))
        print(f"  best bleu4 so far: {state['best_score']:.2f} (epoch {state['best_epoch']})")
        route = route_after_validation(state)
    print(f"Stop reason: {state.get('stop_reason')}")

    # Phase 4: Completion
    print_separator()
    print_phase(4, 7, "COMPLETION")
    state = merge(state, completion_node(state))
    summary = state['summary']
    print(f"Current Phase: {state['current_phase'].value}")
    print(f"Steps: {summary['steps']}")
    print(f"Parameters: {summary['parameter_count']}")
    print(f"Test metrics: {summary['test']}")

    # Phase 5: Evaluation and ablation
    print_separator()
    print_phase(5, 7, "EVALUATION")
    best = os.path.join(state['run_dir'], 'best.ckpt')
    metrics = evaluate(best, paths['test'])
    print(f"BLEU-4 on test: {metrics['bleu4']:.2f}")
    if 'silhouette' in metrics:
        print(f"Silhouette of generated text latents: {metrics['silhouette']:.3f}")
    for row in ablate(best, paths['test'], [0.0, 0.3, 0.6, 0.9]):
        print(f"  word drop p={row['p']:.1f}: BLEU-4 {row['bleu4']:.2f}")

    # Phase 6: Baselines through the compiled graph
    print_separator()
    print_phase(6, 7, "BASELINES")
    for fusion in (FusionKind.CONCAT, FusionKind.AUTO):
        baseline = train(config.with_overrides(fusion=fusion, run_name=f"uat-{fusion.value}"))
        print(f"  - {fusion.value}: best bleu4 {baseline.summary['best_score']:.2f} "
              f"({baseline.summary['parameter_count']} parameters)")

    # Phase 7: Summary
    print_separator()
    print_phase(7, 7, "RUN SUMMARY")
    print(f"Run ID: {state['run_id']}")
    print(f"Phase Transitions: {len(state['phase_history'])}")
    print(f"Metric rows: {len(state['records'])}")
    print(f"Errors: {len(state['errors'])}")
    print(f"\nGenerated Files:")
    for name in ('last.ckpt', 'best.ckpt', 'metrics.csv', 'summary.json', 'status.json'):
        print(f"  - {name}: {os.path.exists(os.path.join(state['run_dir'], name))}")

    print_separator()
    if state['errors']:
        print("[X] UAT FAILED")
        for error in state['errors']:
            print(f"  - {error}")
    else:
        print("[OK] UAT COMPLETED SUCCESSFULLY")
    print_separator()


if __name__ == "__main__":
    main()
