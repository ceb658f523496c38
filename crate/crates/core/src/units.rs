//! Unit conversions between the configuration surface and internal SI.
//!
//! All internal state is strict SI: meters, seconds, kilograms, pascals.
//! Configuration files use the units clinical and experimental sources are
//! quoted in (kPa, mmHg, mm, ml, kPa s/mm, ...); conversion happens once at
//! the config boundary, never inside the physics.

/// Pascals per millimeter of mercury.
pub const PA_PER_MMHG: f64 = 133.322_387_415;

/// Pascals per kilopascal.
pub const PA_PER_KPA: f64 = 1.0e3;

/// Meters per millimeter.
pub const M_PER_MM: f64 = 1.0e-3;

/// Cubic meters per milliliter.
pub const M3_PER_ML: f64 = 1.0e-6;

/// Converts mmHg to Pa.
pub fn mmhg_to_pa(p: f64) -> f64 {
    p * PA_PER_MMHG
}

/// Converts Pa to mmHg.
pub fn pa_to_mmhg(p: f64) -> f64 {
    p / PA_PER_MMHG
}

/// Converts kPa to Pa.
pub fn kpa_to_pa(p: f64) -> f64 {
    p * PA_PER_KPA
}

/// Converts a spring stiffness in kPa/mm to Pa/m.
pub fn kpa_per_mm_to_pa_per_m(k: f64) -> f64 {
    k * PA_PER_KPA / M_PER_MM
}

/// Converts a dashpot viscosity in kPa s/mm to Pa s/m.
pub fn kpa_s_per_mm_to_pa_s_per_m(c: f64) -> f64 {
    c * PA_PER_KPA / M_PER_MM
}

/// Converts milliliters to cubic meters.
pub fn ml_to_m3(v: f64) -> f64 {
    v * M3_PER_ML
}

/// Converts cubic meters to milliliters.
pub fn m3_to_ml(v: f64) -> f64 {
    v / M3_PER_ML
}

/// Converts millimeters to meters.
pub fn mm_to_m(x: f64) -> f64 {
    x * M_PER_MM
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn round_trips() {
        assert_relative_eq!(pa_to_mmhg(mmhg_to_pa(8.0)), 8.0, epsilon = 1e-12);
        assert_relative_eq!(m3_to_ml(ml_to_m3(57.0)), 57.0, epsilon = 1e-12);
    }

    #[test]
    fn spot_values() {
        assert_relative_eq!(mmhg_to_pa(1.0), 133.322387415);
        assert_relative_eq!(kpa_to_pa(0.2), 200.0);
        // 0.2 kPa/mm -> 2e5 Pa/m
        assert_relative_eq!(kpa_per_mm_to_pa_per_m(0.2), 2.0e5);
        // 5e-3 kPa s/mm -> 5e3 Pa s/m
        assert_relative_eq!(kpa_s_per_mm_to_pa_s_per_m(5.0e-3), 5.0e3);
    }
}
