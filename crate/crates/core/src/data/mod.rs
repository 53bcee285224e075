//! Interaction logs, leave-one-out splits, model inputs and synthetic corpora.

mod examples;
mod log;
mod split;
mod synth;

pub use examples::{make_examples, ExampleMode, Phase, SequenceExample};
pub use log::{load_interactions, write_interactions, Interaction, InteractionLog};
pub use split::{five_core, popularity, split_leave_one_out, SplitManifest, UserSplit};
pub use synth::{item_name, synth_corpus, SynthConfig};
