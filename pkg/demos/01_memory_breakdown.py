"""Where does training memory go?

Profiles the WRN-28-2 image classifier and the dynamic-convolution
translation model under their standard training configurations and prints
the model / optimizer / activation breakdown.  Activations dominate both.
"""

from trainmem import (
    CheckpointStrategy,
    TrainingConfig,
    build_dc_transformer_cost,
    build_wrn,
    total_report,
)
from trainmem.numerics import NumericFormat


def show(title, graph, config):
    mem, fl = total_report(graph, config)
    total = mem.total_bytes
    print(f"\n{title}  ({graph.total_param_count() / 1e6:.2f}M parameters)")
    rows = [
        ("model", mem.model_bytes),
        ("optimizer", mem.optimizer_bytes),
        ("activations (fwd)", mem.activation_forward_bytes),
        ("activations (bwd)", mem.activation_backward_bytes),
    ]
    for name, b in rows:
        bar = "#" * int(40 * b / total)
        print(f"  {name:18s} {b / 1e6:9.2f} MB  {100 * b / total:5.1f}%  {bar}")
    print(f"  {'total':18s} {mem.total_mb:9.2f} MB")
    print(f"  forward {fl.forward_flops / 1e9:.2f} GFLOPs, backward {fl.backward_flops / 1e9:.2f} GFLOPs")


if __name__ == "__main__":
    wrn = build_wrn(28, 2, 10)
    show("WRN-28-2, dense FP32, minibatch 100", wrn,
         TrainingConfig(minibatch=100, microbatch=100))

    dct = build_dc_transformer_cost()
    show("DC-Transformer, dense FP32, 4000-token minibatch", dct,
         TrainingConfig(minibatch=4000, microbatch=4000, batch_unit="tokens",
                        optimizer_kind="adam"))

    print("\nThe same network with every technique applied:")
    show("WRN-28-2, 30% nonzero, FP16, microbatch 10, residual-2* checkpoints", wrn,
         TrainingConfig(density={"conv": 0.3}, precision=NumericFormat.FP16,
                        minibatch=100, microbatch=10,
                        strategy=CheckpointStrategy.parse("residual_star:2")))
