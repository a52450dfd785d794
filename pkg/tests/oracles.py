"""Independent reference computations used by the tests.

Written from the model equations directly, sharing no code with the package.
"""

import math

import numpy as np


def slip_reference(v, w, steer, wheel_speed, p, roll=0.0, pitch=0.0, dt=0.1):
    """Slip bicycle forces and next rates, assembled term by term.

    Returns a dict with the four tire forces, body force, yaw acceleration and
    the next (velocity, angular velocity).
    """
    m, g = p.mass, p.gravity
    lf, lr = p.front_axle_distance, p.rear_axle_distance
    L = lf + lr
    mu, B, C = p.friction, p.tire_stiffness, p.tire_shape
    d = min(max(steer, -p.max_steer), p.max_steer)
    vx, vy, vz = v
    wx, wy, wz = w

    fz_front = m * g * lr / L
    fz_rear = m * g * lf / L
    denom = max(abs(vx), 0.1)
    alpha_f = math.atan((vy + wz * lf) / denom) - d
    alpha_r = math.atan((vy - wz * lr) / denom)
    fy_front = -mu * fz_front * math.sin(C * math.atan(B * alpha_f))
    fy_rear = -mu * fz_rear * math.sin(C * math.atan(B * alpha_r))
    push = p.drive_gain * m * (wheel_speed - vx)
    fx_front = push * fz_front / (fz_front + fz_rear)
    fx_rear = push * fz_rear / (fz_front + fz_rear)

    def clip(fx, fy, fz):
        lim = mu * fz
        n = math.sqrt(fx * fx + fy * fy)
        if n > lim:
            return fx * lim / n, fy * lim / n
        return fx, fy

    fx_front, fy_front = clip(fx_front, fy_front, fz_front)
    fx_rear, fy_rear = clip(fx_rear, fy_rear, fz_rear)

    s, c = math.sin(d), math.cos(d)
    Fx = fx_rear + fx_front * c - fy_front * s + m * g * math.sin(pitch)
    Fy = fy_rear + fy_front * c + fx_front * s + m * g * math.sin(roll)
    Fz = m * (g * math.cos(roll) * math.cos(pitch) - vx * wy + vy * wx)
    wz_dot = ((fx_front * s + fy_front * c) * lf - fy_rear * lr) / p.yaw_inertia

    v_next = np.array([vx + dt * (Fx / m + wz * vy), vy + dt * (Fy / m - wz * vx), vz])
    w_next = np.array([wx, wy, wz + dt * wz_dot])
    return {
        "tires": (fx_front, fy_front, fx_rear, fy_rear),
        "body_force": np.array([Fx, Fy, Fz]),
        "yaw_acceleration": wz_dot,
        "velocity": v_next,
        "angular_velocity": w_next,
    }


def noslip_reference(steer, wheel_speed, wheelbase):
    return np.array([wheel_speed, 0.0, 0.0]), np.array([0.0, 0.0, wheel_speed * math.tan(steer) / wheelbase])


def fd_gradient_error(w, x, t, eps=1e-5) -> float:
    """Largest relative gap between backward() and central differences."""
    from offroad_bench.learn import backward

    _, grads = backward(w, x, t)
    worst = 0.0
    for (W, b), (dW, db) in zip(w.layers, grads):
        for arr, g in ((W, dW), (b, db)):
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                up = backward(w, x, t)[0]
                arr[idx] = old - eps
                down = backward(w, x, t)[0]
                arr[idx] = old
                fd = (up - down) / (2 * eps)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-6))
    return worst
