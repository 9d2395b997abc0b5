//! The seven verification systems compared in the experiment matrix, each a
//! (back-end training set, evaluation set, extraction) triple.

use spkx_core::extractor::Variant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Training {
    Clean,
    /// Clean training utterances pooled with extracted dev-split speech.
    CleanExt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSet {
    Mixture,
    Clean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct System {
    pub id: u8,
    pub training: Training,
    pub eval: EvalSet,
    pub tse: Option<Variant>,
}

pub const SYSTEMS: [System; 7] = [
    System {
        id: 1,
        training: Training::Clean,
        eval: EvalSet::Mixture,
        tse: None,
    },
    System {
        id: 2,
        training: Training::CleanExt,
        eval: EvalSet::Mixture,
        tse: None,
    },
    System {
        id: 3,
        training: Training::Clean,
        eval: EvalSet::Mixture,
        tse: Some(Variant::SbfMtsal),
    },
    System {
        id: 4,
        training: Training::Clean,
        eval: EvalSet::Mixture,
        tse: Some(Variant::SbfMtsalConcat),
    },
    System {
        id: 5,
        training: Training::CleanExt,
        eval: EvalSet::Mixture,
        tse: Some(Variant::SbfMtsalConcat),
    },
    System {
        id: 6,
        training: Training::Clean,
        eval: EvalSet::Clean,
        tse: None,
    },
    System {
        id: 7,
        training: Training::CleanExt,
        eval: EvalSet::Clean,
        tse: None,
    },
];

impl System {
    pub fn describe(&self) -> String {
        let training = match self.training {
            Training::Clean => "clean",
            Training::CleanExt => "clean+ext",
        };
        let eval = match self.eval {
            EvalSet::Mixture => "mixture",
            EvalSet::Clean => "clean",
        };
        let tse = self.tse.map_or("none", Variant::as_str);
        format!(
            "system {}: train {training}, eval {eval}, tse {tse}",
            self.id
        )
    }
}
