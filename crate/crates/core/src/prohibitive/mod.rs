//! Prohibitive functions: calls the verifier may skip, leaving their outputs
//! symbolic until later passes make their inputs concrete.

mod exec;
mod registry;
pub mod toy;
mod whitelist;

pub use exec::{
    collect_assumptions, exec_step_prohibitive, fire_lazy_generators, forced_parts, late_concretize, skipped_sites, Assumption, LazyError,
    WhitelistViolation,
};
pub use registry::{
    builtin_impl, builtin_inverse, builtin_suite, Concrete, Implementation, InputLayout, Inverse, LazyGenerator, OutputRule, OutputShape,
    ProhibitiveEntry, ProhibitiveRegistry, RegistryError, Trigger, BUILTIN_DECLARATIONS,
};
pub use whitelist::{default_whitelist, OutputPredicate, Whitelist, WhitelistEntry, WhitelistError, DEFAULT_WHITELIST};
