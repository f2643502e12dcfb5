"""Look inside the recall memory of one recurrent cell.

The cell keeps its last few cell states in a FIFO bank and reads them back with
softmax attention. This prints the bank length and the attention weights step
by step, and shows that an all-zero bank reduces to the plain update.

    python3 demos/02_recall_memory.py
"""
import torch

from vidpred.e3d import E3DCell, RecallState, recall_attend

torch.manual_seed(0)
cell = E3DCell(in_channels=1, hidden_channels=4, capacity=3)
state = cell.init_state(1, 16, 16)

for t in range(6):
    x = torch.rand(1, 1, 16, 16)
    held = len(state.bank)
    *_, r = cell.gates(x, state)
    if state.bank:
        _, w = recall_attend(torch.sigmoid(r), state.bank,
                             [cell.key_proj(b) for b in state.bank], return_weights=True)
        weights = " ".join(f"{v:.3f}" for v in w[0].tolist())
    else:
        weights = "(empty bank)"
    _, state = cell(x, state)
    print(f"t={t}  bank holds {held}  attention: {weights}")

zero = RecallState(state.hidden, state.cell, tuple(torch.zeros_like(b) for b in state.bank),
                   state.inputs, state.capacity)
x = torch.rand(1, 1, 16, 16)
diff = (cell(x, zero)[0] - cell(x, state, use_bank=False)[0]).abs().max().item()
print("zero bank vs no bank, max |diff|:", diff)
