"""Textbook dense iLQR backward pass, built independently of the projected solver.

Every Jacobian is materialized column by column and every value-function
quantity is a full matrix.
"""
import numpy as np

from docontrol.dynamics import INPUT, linearize
from docontrol.operators import terminal_cost_grad, terminal_cost_hess_action


def dense_jacobians(traj, t, score, sched):
    lin = linearize(traj.states[t], traj.u(t), t, score, sched, traj.mode)
    d = traj.states.shape[1]
    eye = np.eye(d)
    hx = np.column_stack([lin.jvp_x(eye[:, j]) for j in range(d)])
    hu = hx.copy() if traj.mode == INPUT else eye
    return hx, hu


def dense_backward(traj, meas, score, sched, alpha, running_weight):
    d = traj.states.shape[1]
    eye = np.eye(d)
    Vx = terminal_cost_grad(meas, traj.x0)
    Vxx = np.column_stack([terminal_cost_hess_action(meas, traj.x0, eye[:, j]) for j in range(d)])
    out = {"k": [None], "K": [None], "Vx": [Vx], "Vxx": [Vxx]}
    for t in range(1, traj.T + 1):
        hx, hu = dense_jacobians(traj, t, score, sched)
        lu = 2 * running_weight * traj.u(t)
        luu = 2 * running_weight * eye
        Qx = hx.T @ Vx
        Qu = lu + hu.T @ Vx
        Qxx = hx.T @ Vxx @ hx
        Quu = luu + hu.T @ Vxx @ hu
        Qux = hu.T @ Vxx @ hx
        Qt = Quu + alpha * eye
        k = -np.linalg.solve(Qt, Qu)
        K = -np.linalg.solve(Qt, Qux)
        Vx = Qx + K.T @ Qt @ k + K.T @ Qu + Qux.T @ k
        Vxx = Qxx + K.T @ Qt @ K + K.T @ Qux + Qux.T @ K
        Vxx = 0.5 * (Vxx + Vxx.T)
        out["k"].append(k)
        out["K"].append(K)
        out["Vx"].append(Vx)
        out["Vxx"].append(Vxx)
    return out
