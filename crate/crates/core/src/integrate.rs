//! Fixed-step explicit integration.

use nalgebra::SVector;

use crate::scalar::{lit, Real};

/// Classical fourth-order Runge-Kutta step of `ẋ = f(t, x)`.
pub fn rk4<T, E, F, const N: usize>(
    x: &SVector<T, N>,
    t: T,
    dt: T,
    mut f: F,
) -> Result<SVector<T, N>, E>
where
    T: Real,
    F: FnMut(T, &SVector<T, N>) -> Result<SVector<T, N>, E>,
{
    let half = dt * lit(0.5);
    let k1 = f(t, x)?;
    let k2 = f(t + half, &(x + k1 * half))?;
    let k3 = f(t + half, &(x + k2 * half))?;
    let k4 = f(t + dt, &(x + k3 * dt))?;
    Ok(x + (k1 + k2 * lit::<T>(2.0) + k3 * lit::<T>(2.0) + k4) * (dt / lit(6.0)))
}
