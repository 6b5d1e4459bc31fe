//! Fiat-Shamir transcript and the once-per-session challenge derivation.

use alloc::string::String;
use alloc::vec::Vec;

use crate::commit::{Digest, Hasher};
use crate::error::TranscriptError;
use crate::field::{FieldElement, MODULUS};

pub const TAG_MODEL_ROOT: &str = "MODEL-ROOT";
pub const TAG_INPUT: &str = "INPUT";
pub const TAG_WITNESS_ROOT: &str = "WITNESS-ROOT";
pub const TAG_Z: &str = "ZMUL-Z";
pub const TAG_T: &str = "PERM-T";

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogEntry {
    pub tag: String,
    /// Hash of the absorbed bytes, or of the derived challenge.
    pub digest: Digest,
}

/// Running hash state plus an audit log of everything absorbed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    state: Digest,
    log: Vec<LogEntry>,
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}

fn check_tag(tag: &str) -> Result<(), TranscriptError> {
    if tag.is_empty() || !tag.is_ascii() {
        return Err(TranscriptError::EmptyTag);
    }
    Ok(())
}

impl Transcript {
    pub fn new() -> Self {
        Self {
            state: Hasher::new("VT-TRANSCRIPT-V1").finish(),
            log: Vec::new(),
        }
    }

    pub fn state(&self) -> Digest {
        self.state
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    /// `state' = H(state || tag || len || data)`.
    pub fn absorb(&mut self, tag: &str, data: &[u8]) -> Result<(), TranscriptError> {
        check_tag(tag)?;
        let mut h = Hasher::new("");
        h.digest(&self.state).bytes(tag.as_bytes()).u64(data.len() as u64).bytes(data);
        self.state = h.finish();
        let mut d = Hasher::new("");
        d.bytes(data);
        self.log.push(LogEntry {
            tag: tag.into(),
            digest: d.finish(),
        });
        Ok(())
    }

    /// The low 16 bytes of `H(state || tag)` reduced mod p; a zero result is
    /// re-derived with a counter. The challenge is absorbed back so the state
    /// advances.
    pub fn challenge_field(&mut self, tag: &str) -> Result<FieldElement, TranscriptError> {
        check_tag(tag)?;
        let mut counter = 0u64;
        let c = loop {
            let mut h = Hasher::new("");
            h.digest(&self.state).bytes(tag.as_bytes());
            if counter > 0 {
                h.u64(counter);
            }
            let d = h.finish();
            let mut lo = [0u8; 16];
            lo.copy_from_slice(&d.0[..16]);
            let v = (u128::from_le_bytes(lo) % MODULUS as u128) as u64;
            if v != 0 {
                break FieldElement::new(v);
            }
            counter += 1;
        };
        self.absorb(tag, &c.to_le_bytes())?;
        Ok(c)
    }
}

/// The session-wide challenges shared by every component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Challenges {
    /// ZMul evaluation point.
    pub z: FieldElement,
    /// Characteristic-polynomial evaluation point.
    pub t: FieldElement,
}

/// A session that has absorbed the public model root and input but not yet
/// the witness. The only way to obtain challenges is through
/// [`Session::bind_witness`] followed by [`WitnessBound::derive`], both of which
/// consume the session.
#[derive(Debug)]
pub struct Session {
    transcript: Transcript,
}

#[derive(Debug)]
pub struct WitnessBound {
    transcript: Transcript,
}

impl Session {
    pub fn new(model_root: &Digest, input_digest: &Digest) -> Self {
        let mut transcript = Transcript::new();
        transcript.absorb(TAG_MODEL_ROOT, &model_root.0).expect("static tag");
        transcript.absorb(TAG_INPUT, &input_digest.0).expect("static tag");
        Self { transcript }
    }

    pub fn bind_witness(mut self, witness_root: &Digest) -> WitnessBound {
        self.transcript
            .absorb(TAG_WITNESS_ROOT, &witness_root.0)
            .expect("static tag");
        WitnessBound {
            transcript: self.transcript,
        }
    }
}

impl WitnessBound {
    pub fn derive(mut self) -> (Challenges, Transcript) {
        let z = self.transcript.challenge_field(TAG_Z).expect("static tag");
        let t = self.transcript.challenge_field(TAG_T).expect("static tag");
        (Challenges { z, t }, self.transcript)
    }
}

pub fn derive_session_challenges(model_root: &Digest, input_digest: &Digest, witness_root: &Digest) -> Challenges {
    Session::new(model_root, input_digest)
        .bind_witness(witness_root)
        .derive()
        .0
}
