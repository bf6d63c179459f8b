pub mod mpfr;
