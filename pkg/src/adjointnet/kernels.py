"""Hot inner loops with a numba path and a pure-numpy path.

The backend is chosen once at import from ``ADJOINTNET_BACKEND`` (``numba`` or
``numpy``). ``numba`` is the default whenever it imports. ``set_backend`` switches
at runtime, which the tests and the benchmark use to compare the two paths.
"""

import os

import numpy as np

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

BACKENDS = ("numba", "numpy")


def _initial_backend():
    name = os.environ.get("ADJOINTNET_BACKEND", "").strip().lower()
    if not name:
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in BACKENDS:
        raise ValueError(f"ADJOINTNET_BACKEND must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("ADJOINTNET_BACKEND=numba but numba is not importable")
    return name


_backend = _initial_backend()


def get_backend():
    return _backend


def set_backend(name):
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}, got {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise ValueError("numba is not importable")
    _backend = name


# --------------------------------------------------------------------------
# Thomas tridiagonal solve, many right-hand sides at once.
# lower[i] couples row i to i-1 (lower[0] unused); upper[i] couples i to i+1.

def _thomas_np(lower, diag, upper, rhs):
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty_like(rhs)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / denom
    x = np.empty_like(rhs)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def _thomas_nb_impl(lower, diag, upper, rhs):
    n, m = rhs.shape
    cp = np.empty(n)
    dp = np.empty((n, m))
    cp[0] = upper[0] / diag[0]
    for k in range(m):
        dp[0, k] = rhs[0, k] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / denom
        for k in range(m):
            dp[i, k] = (rhs[i, k] - lower[i] * dp[i - 1, k]) / denom
    x = np.empty((n, m))
    for k in range(m):
        x[n - 1, k] = dp[n - 1, k]
    for i in range(n - 2, -1, -1):
        for k in range(m):
            x[i, k] = dp[i, k] - cp[i] * x[i + 1, k]
    return x


# --------------------------------------------------------------------------
# 1D slightly-compressible Darcy residual and its tridiagonal Jacobian.
# Residual per unit cross-section (kg / (m^2 s)):
#   F_i = phi*dx*(rho(u_i) - rho(u_old_i))/dt - sum_faces rho_f*T_f*(u_nb - u_i)/mu
# with rho_f the arithmetic mean of the two densities and T_f = k_face/distance.

def _darcy_assemble_np(u, u_old, trans, p_left, p_right, dx, phi, mu, rho0, cf, p_ref, dt):
    n = u.shape[0]
    drho = rho0 * cf
    acc = phi * dx / dt
    # rho(u) - rho(u_old) for the linear EOS, without subtracting two ~rho0 numbers
    res = acc * drho * (u - u_old)
    diag = np.full(n, acc * drho)
    lower = np.zeros(n)
    upper = np.zeros(n)

    # trans has n+1 entries: face 0 is the left boundary, face n the right one.
    u_ext = np.empty(n + 2)
    u_ext[0] = p_left
    u_ext[1:-1] = u
    u_ext[-1] = p_right
    rho_ext = rho0 * (1.0 + cf * (u_ext - p_ref))
    rho_f = 0.5 * (rho_ext[:-1] + rho_ext[1:])
    du = u_ext[1:] - u_ext[:-1]
    g = rho_f * trans * du / mu  # mass flux from face's right side to its left side
    res -= g[1:]
    res += g[:-1]

    # d g_f / d u_right and d g_f / d u_left
    dg_right = 0.5 * drho * trans * du / mu + rho_f * trans / mu
    dg_left = 0.5 * drho * trans * du / mu - rho_f * trans / mu
    diag -= dg_left[1:]
    diag += dg_right[:-1]
    upper[:-1] = -dg_right[1:-1]
    lower[1:] = dg_left[1:-1]
    return res, lower, diag, upper


def _darcy_assemble_nb_impl(u, u_old, trans, p_left, p_right, dx, phi, mu, rho0, cf, p_ref, dt):
    n = u.shape[0]
    drho = rho0 * cf
    acc = phi * dx / dt
    res = np.empty(n)
    diag = np.empty(n)
    lower = np.zeros(n)
    upper = np.zeros(n)
    for i in range(n):
        res[i] = acc * drho * (u[i] - u_old[i])
        diag[i] = acc * drho
    for f in range(n + 1):
        ul = p_left if f == 0 else u[f - 1]
        ur = p_right if f == n else u[f]
        rho_l = rho0 * (1.0 + cf * (ul - p_ref))
        rho_r = rho0 * (1.0 + cf * (ur - p_ref))
        rho_f = 0.5 * (rho_l + rho_r)
        du = ur - ul
        g = rho_f * trans[f] * du / mu
        dg_right = 0.5 * drho * trans[f] * du / mu + rho_f * trans[f] / mu
        dg_left = 0.5 * drho * trans[f] * du / mu - rho_f * trans[f] / mu
        if f > 0:
            # face f is the right face of cell f-1
            res[f - 1] -= g
            diag[f - 1] -= dg_left
            if f < n:
                upper[f - 1] = -dg_right
        if f < n:
            # face f is the left face of cell f
            res[f] += g
            diag[f] += dg_right
            if f > 0:
                lower[f] = dg_left
    return res, lower, diag, upper


# --------------------------------------------------------------------------
# Lid-driven cavity: one explicit projection step on a collocated node grid.
# Arrays are indexed [j, i] with j along y and i along x.

def _cavity_step_np(u, v, p, rho, nu, dt, dx, dy, nit, lid):
    un = u.copy()
    vn = v.copy()
    b = np.zeros_like(p)
    dudx = (un[1:-1, 2:] - un[1:-1, :-2]) / (2.0 * dx)
    dudy = (un[2:, 1:-1] - un[:-2, 1:-1]) / (2.0 * dy)
    dvdx = (vn[1:-1, 2:] - vn[1:-1, :-2]) / (2.0 * dx)
    dvdy = (vn[2:, 1:-1] - vn[:-2, 1:-1]) / (2.0 * dy)
    b[1:-1, 1:-1] = rho * ((dudx + dvdy) / dt - dudx * dudx - 2.0 * dudy * dvdx - dvdy * dvdy)

    dx2 = dx * dx
    dy2 = dy * dy
    p = p.copy()
    for _ in range(nit):
        pn = p.copy()
        p[1:-1, 1:-1] = ((pn[1:-1, 2:] + pn[1:-1, :-2]) * dy2
                         + (pn[2:, 1:-1] + pn[:-2, 1:-1]) * dx2
                         - b[1:-1, 1:-1] * dx2 * dy2) / (2.0 * (dx2 + dy2))
        p[:, -1] = p[:, -2]
        p[0, :] = p[1, :]
        p[:, 0] = p[:, 1]
        p[-1, :] = 0.0

    u = un.copy()
    v = vn.copy()
    uc = un[1:-1, 1:-1]
    vc = vn[1:-1, 1:-1]
    u[1:-1, 1:-1] = (uc
                     - uc * dt / (2.0 * dx) * (un[1:-1, 2:] - un[1:-1, :-2])
                     - vc * dt / (2.0 * dy) * (un[2:, 1:-1] - un[:-2, 1:-1])
                     - dt / (2.0 * rho * dx) * (p[1:-1, 2:] - p[1:-1, :-2])
                     + nu * (dt / dx2 * (un[1:-1, 2:] - 2.0 * uc + un[1:-1, :-2])
                             + dt / dy2 * (un[2:, 1:-1] - 2.0 * uc + un[:-2, 1:-1])))
    v[1:-1, 1:-1] = (vc
                     - uc * dt / (2.0 * dx) * (vn[1:-1, 2:] - vn[1:-1, :-2])
                     - vc * dt / (2.0 * dy) * (vn[2:, 1:-1] - vn[:-2, 1:-1])
                     - dt / (2.0 * rho * dy) * (p[2:, 1:-1] - p[:-2, 1:-1])
                     + nu * (dt / dx2 * (vn[1:-1, 2:] - 2.0 * vc + vn[1:-1, :-2])
                             + dt / dy2 * (vn[2:, 1:-1] - 2.0 * vc + vn[:-2, 1:-1])))
    u[0, :] = 0.0
    u[:, 0] = 0.0
    u[:, -1] = 0.0
    u[-1, :] = lid
    v[0, :] = 0.0
    v[-1, :] = 0.0
    v[:, 0] = 0.0
    v[:, -1] = 0.0
    return u, v, p


def _cavity_step_nb_impl(u, v, p, rho, nu, dt, dx, dy, nit, lid):
    ny, nx = u.shape
    dx2 = dx * dx
    dy2 = dy * dy
    b = np.zeros((ny, nx))
    for j in range(1, ny - 1):
        for i in range(1, nx - 1):
            dudx = (u[j, i + 1] - u[j, i - 1]) / (2.0 * dx)
            dudy = (u[j + 1, i] - u[j - 1, i]) / (2.0 * dy)
            dvdx = (v[j, i + 1] - v[j, i - 1]) / (2.0 * dx)
            dvdy = (v[j + 1, i] - v[j - 1, i]) / (2.0 * dy)
            b[j, i] = rho * ((dudx + dvdy) / dt - dudx * dudx - 2.0 * dudy * dvdx - dvdy * dvdy)

    p = p.copy()
    pn = np.empty((ny, nx))
    denom = 2.0 * (dx2 + dy2)
    for _ in range(nit):
        pn[:, :] = p
        for j in range(1, ny - 1):
            for i in range(1, nx - 1):
                p[j, i] = ((pn[j, i + 1] + pn[j, i - 1]) * dy2
                           + (pn[j + 1, i] + pn[j - 1, i]) * dx2
                           - b[j, i] * dx2 * dy2) / denom
        for j in range(ny):
            p[j, nx - 1] = p[j, nx - 2]
        for i in range(nx):
            p[0, i] = p[1, i]
        for j in range(ny):
            p[j, 0] = p[j, 1]
        for i in range(nx):
            p[ny - 1, i] = 0.0

    un = u
    vn = v
    u = un.copy()
    v = vn.copy()
    for j in range(1, ny - 1):
        for i in range(1, nx - 1):
            uc = un[j, i]
            vc = vn[j, i]
            u[j, i] = (uc
                       - uc * dt / (2.0 * dx) * (un[j, i + 1] - un[j, i - 1])
                       - vc * dt / (2.0 * dy) * (un[j + 1, i] - un[j - 1, i])
                       - dt / (2.0 * rho * dx) * (p[j, i + 1] - p[j, i - 1])
                       + nu * (dt / dx2 * (un[j, i + 1] - 2.0 * uc + un[j, i - 1])
                               + dt / dy2 * (un[j + 1, i] - 2.0 * uc + un[j - 1, i])))
            v[j, i] = (vc
                       - uc * dt / (2.0 * dx) * (vn[j, i + 1] - vn[j, i - 1])
                       - vc * dt / (2.0 * dy) * (vn[j + 1, i] - vn[j - 1, i])
                       - dt / (2.0 * rho * dy) * (p[j + 1, i] - p[j - 1, i])
                       + nu * (dt / dx2 * (vn[j, i + 1] - 2.0 * vc + vn[j, i - 1])
                               + dt / dy2 * (vn[j + 1, i] - 2.0 * vc + vn[j - 1, i])))
    for i in range(nx):
        u[0, i] = 0.0
    for j in range(ny):
        u[j, 0] = 0.0
        u[j, nx - 1] = 0.0
    for i in range(nx):
        u[ny - 1, i] = lid
    for i in range(nx):
        v[0, i] = 0.0
        v[ny - 1, i] = 0.0
    for j in range(ny):
        v[j, 0] = 0.0
        v[j, nx - 1] = 0.0
    return u, v, p


if HAVE_NUMBA:
    _thomas_nb = numba.njit(cache=True, nogil=True)(_thomas_nb_impl)
    _darcy_assemble_nb = numba.njit(cache=True, nogil=True)(_darcy_assemble_nb_impl)
    _cavity_step_nb = numba.njit(cache=True, nogil=True)(_cavity_step_nb_impl)
else:  # pragma: no cover
    _thomas_nb = _darcy_assemble_nb = _cavity_step_nb = None


def thomas(lower, diag, upper, rhs):
    """Solve a tridiagonal system for one (n,) or several (n, m) right-hand sides."""
    rhs = np.asarray(rhs, dtype=float)
    if _backend == "numba":
        if rhs.ndim == 1:
            return _thomas_nb(lower, diag, upper, rhs[:, None])[:, 0]
        return _thomas_nb(lower, diag, upper, np.ascontiguousarray(rhs))
    return _thomas_np(lower, diag, upper, rhs)


def darcy_assemble(u, u_old, trans, p_left, p_right, dx, phi, mu, rho0, cf, p_ref, dt):
    """Return ``(residual, lower, diag, upper)`` for one backward-Euler Darcy step."""
    args = (np.ascontiguousarray(u, dtype=float), np.ascontiguousarray(u_old, dtype=float),
            np.ascontiguousarray(trans, dtype=float),
            float(p_left), float(p_right), float(dx), float(phi), float(mu),
            float(rho0), float(cf), float(p_ref), float(dt))
    if _backend == "numba":
        return _darcy_assemble_nb(*args)
    return _darcy_assemble_np(*args)


def cavity_step(u, v, p, rho, nu, dt, dx, dy, nit, lid):
    """Advance the cavity fields by one explicit step; inputs are not modified."""
    args = (np.ascontiguousarray(u, dtype=float), np.ascontiguousarray(v, dtype=float),
            np.ascontiguousarray(p, dtype=float), float(rho), float(nu), float(dt),
            float(dx), float(dy), int(nit), float(lid))
    if _backend == "numba":
        return _cavity_step_nb(*args)
    return _cavity_step_np(*args)
