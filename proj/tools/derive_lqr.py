#!/usr/bin/env python3
"""Derives the cart-pole LQR gain hard-coded in src/demonstrators.cpp.

The discrete-time system is the Jacobian of one semi-implicit Euler step
(dt = 0.02 s) about the upright equilibrium, with the normalized action
a in [-1, 1] (force = 10 N * a) as input. The gain solves the discrete
algebraic Riccati equation for the state/action costs below; the teacher
applies a = clip(-K s, -1, 1).

Usage: python3 tools/derive_lqr.py
"""

import numpy as np
from scipy.linalg import solve_discrete_are

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLE_MASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_SCALE = 10.0
DT = 0.02

STATE_COST = np.diag([1.0, 1.0, 10.0, 1.0])
ACTION_COST = np.array([[1.0]])


def step(state, action):
    x, x_dot, theta, theta_dot = state
    force = FORCE_SCALE * action
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    temp = (force + POLE_MASS_LENGTH * theta_dot**2 * sin_t) / TOTAL_MASS
    theta_acc = (GRAVITY * sin_t - cos_t * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos_t**2 / TOTAL_MASS))
    x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos_t / TOTAL_MASS
    x_dot = x_dot + DT * x_acc
    x = x + DT * x_dot
    theta_dot = theta_dot + DT * theta_acc
    theta = theta + DT * theta_dot
    return np.array([x, x_dot, theta, theta_dot])


def linearize(h=1e-6):
    zero = np.zeros(4)
    a_mat = np.zeros((4, 4))
    for i in range(4):
        e = np.zeros(4)
        e[i] = h
        a_mat[:, i] = (step(zero + e, 0.0) - step(zero - e, 0.0)) / (2 * h)
    b_mat = ((step(zero, h) - step(zero, -h)) / (2 * h)).reshape(4, 1)
    return a_mat, b_mat


def main():
    a_mat, b_mat = linearize()
    p = solve_discrete_are(a_mat, b_mat, STATE_COST, ACTION_COST)
    gain = np.linalg.solve(ACTION_COST + b_mat.T @ p @ b_mat, b_mat.T @ p @ a_mat)
    np.set_printoptions(precision=17)
    print("A =\n", a_mat)
    print("B =\n", b_mat.ravel())
    print("K = {" + ", ".join(f"{k:.17g}" for k in gain.ravel()) + "}")


if __name__ == "__main__":
    main()
