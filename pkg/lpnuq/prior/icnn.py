import numpy as np
import torch
import torch.nn as nn

from lpnuq.errors import ShapeError

DTYPE = torch.float64


class PriorModel(nn.Module):
    """
    Input-convex scalar potential psi(z) whose input gradient is the learned proximal map.

    Layout: h1 = s(Wx0 z + b0), h_{l+1} = s(Wz_l h_l + Wx_l z + b_l),
    psi = w_out . h_L + wx . z + alpha / 2 |z|^2, with s the softplus of sharpness beta.
    The hidden-to-hidden weights Wz_l and w_out are kept non-negative by `project_`,
    which together with the convex non-decreasing softplus makes psi convex in z.
    """

    def __init__(self, inputDim=784, hidden=(128, 128), beta=100.0, alpha=1e-2):
        super().__init__()
        if len(hidden) < 1:
            raise ValueError("at least one hidden layer is required")
        if alpha < 0:
            raise ValueError("alpha must be >= 0")

        self.input_dim = int(inputDim)
        self.hidden = tuple(int(h) for h in hidden)
        self.beta = float(beta)
        self.alpha = float(alpha)

        self.input_layers = nn.ModuleList(
            [nn.Linear(self.input_dim, h, bias=True, dtype=DTYPE) for h in self.hidden]
        )
        self.convex_layers = nn.ModuleList(
            [
                nn.Linear(self.hidden[l], self.hidden[l + 1], bias=False, dtype=DTYPE)
                for l in range(len(self.hidden) - 1)
            ]
        )
        self.out_convex = nn.Linear(self.hidden[-1], 1, bias=False, dtype=DTYPE)
        # no bias: a constant in psi leaves its gradient unchanged
        self.out_input = nn.Linear(self.input_dim, 1, bias=False, dtype=DTYPE)
        self.act = nn.Softplus(beta=self.beta)

        with torch.no_grad():
            for layer in self.convex_layers:
                layer.weight.abs_()
            self.out_convex.weight.abs_()

    def convex_weights(self):
        return [layer.weight for layer in self.convex_layers] + [self.out_convex.weight]

    @torch.no_grad()
    def project_(self):
        for w in self.convex_weights():
            w.clamp_(min=0.0)

    def forward(self, z):
        h = self.act(self.input_layers[0](z))
        for convex, passthrough in zip(self.convex_layers, self.input_layers[1:]):
            h = self.act(convex(h) + passthrough(z))
        psi = self.out_convex(h) + self.out_input(z)
        return psi.squeeze(-1) + 0.5 * self.alpha * (z * z).sum(-1)

    def prox(self, z, create_graph=False):
        """f(z) = grad_z psi(z) for a batch (batch x input_dim)."""
        with torch.enable_grad():
            if not z.requires_grad:
                z = z.detach().requires_grad_(True)
            psi = self(z).sum()
            (grad,) = torch.autograd.grad(psi, z, create_graph=create_graph)
        return grad


def _asBatch(model, z):
    z = torch.as_tensor(np.asarray(z, dtype=np.float64))
    if z.numel() != model.input_dim:
        raise ShapeError(f"input has {z.numel()} entries, model expects {model.input_dim}")
    return z.reshape(1, model.input_dim)


def potential(model, z):
    with torch.no_grad():
        return float(model(_asBatch(model, z))[0])


def prox_apply(model, z):
    """Exact input gradient of the potential at z, shaped like z."""
    shape = np.shape(z)
    grad = model.prox(_asBatch(model, z))
    return grad.detach().numpy().reshape(shape)


class LearnedProx:
    """Image-to-image proximal handle backed by a trained PriorModel."""

    def __init__(self, model):
        self.model = model.eval()

    def __call__(self, v):
        return prox_apply(self.model, v)


def identityProx(v):
    return np.array(v, dtype=np.float64, copy=True)
