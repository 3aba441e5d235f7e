"""Sample labeled synthetic dialogues and look at their ground truth.

Every built-in structure is a small Markov chain over dialogue acts with
slot-filled utterance templates per state.  Sampling walks the chain, so
each dialogue carries its true state sequence — which is what lets the
evaluation end of the package score unsupervised predictions later.
"""

import numpy as np

from dialstruct import (
    RngState,
    TransitionMatrix,
    default_structures,
    extract_structure,
    export_dot,
    generate_synthetic,
    get_structure,
)

structures = default_structures()
print("built-in structures:", ", ".join(sorted(structures)))

bus = get_structure("bus")
print(f"\n'bus' has {bus.n_states} states: {', '.join(bus.states)}")
print("transition matrix (rows are source states):")
print(np.array_str(bus.trans, precision=2, suppress_small=True))

corpus = generate_synthetic(bus, 3, min_turns=4, max_turns=6,
                            rng=RngState(0))
dialogue = corpus[0]
print(f"\nfirst sampled dialogue ({dialogue.id}), gold states "
      f"{dialogue.gold_states()}:")
for pair, state in zip(dialogue.pairs, dialogue.gold_states()):
    print(f"  [{bus.states[state]}]")
    print(f"    system: {pair.system_text}")
    print(f"    user:   {pair.user_text}")

# The gold transition matrix renders directly as a structure graph.
t = TransitionMatrix(probs=bus.trans, counts=np.zeros_like(bus.trans))
graph = extract_structure(t, labels=bus.states, threshold=0.05)
print("\nDOT export of the gold structure (threshold 0.05):\n")
print(export_dot(graph))
