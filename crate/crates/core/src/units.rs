//! Unit-tagged scalar quantities.
//!
//! Internal computation is plain SI `f64`. Values that leave the library
//! (reports, limits, derived physiological estimates) are wrapped in
//! [`Quantity`] so that the unit travels with the number and mixing two
//! different units is a compile error.

use std::fmt;
use std::marker::PhantomData;
use std::ops::{Add, Div, Mul, Sub};

/// A physical unit: SI symbol plus the display unit used in reports.
pub trait Unit: Copy + Clone + fmt::Debug + Default + PartialEq {
    const SI_SYMBOL: &'static str;
    const DISPLAY_SYMBOL: &'static str;
    /// Multiply an SI value by this to get the display value.
    const DISPLAY_SCALE: f64;
}

macro_rules! unit {
    ($(#[$m:meta])* $name:ident, $si:expr, $disp:expr, $scale:expr) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, Default, PartialEq)]
        pub struct $name;
        impl Unit for $name {
            const SI_SYMBOL: &'static str = $si;
            const DISPLAY_SYMBOL: &'static str = $disp;
            const DISPLAY_SCALE: f64 = $scale;
        }
    };
}

unit!(Tesla, "T", "pT", 1e12);
unit!(
    /// Fourier component of a field, T·s (shown as pT·ms).
    TeslaSecond,
    "T·s",
    "pT·ms",
    1e15
);
unit!(
    /// Field sensitivity, T/√Hz (shown as fT/√Hz).
    TeslaPerRootHz,
    "T/√Hz",
    "fT/√Hz",
    1e15
);
unit!(Meter, "m", "cm", 1e2);
unit!(Second, "s", "ms", 1e3);
unit!(MeterPerSecond, "m/s", "m/s", 1.0);
unit!(Ampere, "A", "µA", 1e6);
unit!(RadianPerSecond, "rad/s", "rad/s", 1.0);
unit!(PerCubicMeter, "1/m³", "1/m³", 1.0);
unit!(Dimensionless, "", "", 1.0);

/// A scalar carrying its unit in the type.
#[derive(Debug, Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct Quantity<U: Unit> {
    si: f64,
    _unit: PhantomData<U>,
}

impl<U: Unit> Quantity<U> {
    pub const fn new(si: f64) -> Self {
        Self {
            si,
            _unit: PhantomData,
        }
    }

    /// Value in SI units.
    pub fn si(self) -> f64 {
        self.si
    }

    /// Value in the display unit ([`Unit::DISPLAY_SYMBOL`]).
    pub fn display_value(self) -> f64 {
        self.si * U::DISPLAY_SCALE
    }

    pub fn abs(self) -> Self {
        Self::new(self.si.abs())
    }
}

impl<U: Unit> fmt::Display for Quantity<U> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match f.precision() {
            Some(p) => write!(f, "{:.*} {}", p, self.display_value(), U::DISPLAY_SYMBOL),
            None => write!(f, "{} {}", self.display_value(), U::DISPLAY_SYMBOL),
        }
    }
}

impl<U: Unit> Add for Quantity<U> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.si + rhs.si)
    }
}

impl<U: Unit> Sub for Quantity<U> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.si - rhs.si)
    }
}

impl<U: Unit> Mul<f64> for Quantity<U> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        Self::new(self.si * rhs)
    }
}

impl<U: Unit> Div<f64> for Quantity<U> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        Self::new(self.si / rhs)
    }
}

impl<U: Unit> Div for Quantity<U> {
    type Output = f64;
    fn div(self, rhs: Self) -> f64 {
        self.si / rhs.si
    }
}

impl Div<Quantity<Second>> for Quantity<Meter> {
    type Output = Quantity<MeterPerSecond>;
    fn div(self, rhs: Quantity<Second>) -> Quantity<MeterPerSecond> {
        Quantity::new(self.si / rhs.si)
    }
}

pub type Field = Quantity<Tesla>;
pub type FourierComponent = Quantity<TeslaSecond>;
pub type Sensitivity = Quantity<TeslaPerRootHz>;
