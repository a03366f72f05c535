//! Step 3: dynamic sequence updating.
//!
//! Frames are processed in order. Each extracted description is compared
//! against the tracks known before the frame began; a verdict scoring
//! strictly above the threshold extends that track, anything else opens a
//! new one. A track absorbs at most one description per frame, and tracks
//! opened in a frame only become matchable from the next frame on.

use serde::{Deserialize, Serialize};

use super::judge::{Criterion, Judge, JudgeVerdict};
use super::ExtractionError;
use crate::types::{CharacterDescription, IdSequence, StructuredCaption};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterTrack {
    /// Most recently accepted description.
    pub canonical: CharacterDescription,
    pub history: Vec<(u32, CharacterDescription)>,
}

impl CharacterTrack {
    fn open(frame: u32, d: CharacterDescription) -> Self {
        Self {
            canonical: d.clone(),
            history: vec![(frame, d)],
        }
    }

    pub fn frames(&self) -> Vec<u32> {
        self.history.iter().map(|(f, _)| *f).collect()
    }

    pub fn to_sequence(&self, label: impl Into<String>) -> IdSequence {
        IdSequence::new(label, self.frames()).expect("track frames increase strictly")
    }
}

/// Labels `track-1..track-n` in creation order.
pub fn track_sequences(tracks: &[CharacterTrack]) -> Vec<IdSequence> {
    tracks
        .iter()
        .enumerate()
        .map(|(i, t)| t.to_sequence(format!("track-{}", i + 1)))
        .collect()
}

/// Calls `judge` on every track; clamps out-of-range scores and validates
/// the returned index.
pub fn find_most_fit(
    tracks: &[CharacterTrack],
    candidate: &CharacterDescription,
    judge: &dyn Judge,
) -> Result<JudgeVerdict, ExtractionError> {
    let known: Vec<CharacterDescription> = tracks.iter().map(|t| t.canonical.clone()).collect();
    judge_known(&known, candidate, judge)
}

fn judge_known(
    known: &[CharacterDescription],
    candidate: &CharacterDescription,
    judge: &dyn Judge,
) -> Result<JudgeVerdict, ExtractionError> {
    if known.is_empty() {
        return Ok(JudgeVerdict::NONE);
    }
    let v = judge.judge(known, candidate)?;
    match (v.candidate_index, v.score) {
        (None, _) => Ok(JudgeVerdict::NONE),
        (Some(i), _) if i >= known.len() => Err(ExtractionError::Parse {
            stage: super::Stage::Judge,
            detail: format!("judge '{}' returned index {i} for {} tracks", judge.name(), known.len()),
        }),
        (Some(i), score) => {
            let s = score.unwrap_or(0.0);
            let clamped = if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) };
            if clamped != s {
                log::warn!("judge '{}' score {s} clamped to {clamped}", judge.name());
            }
            Ok(JudgeVerdict::at(i, clamped))
        }
    }
}

/// One judged description, as recorded for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub frame: u32,
    /// The description text the judge was shown.
    pub judged_text: String,
    /// Track indices the judge was shown, in order.
    pub eligible: Vec<usize>,
    pub verdict: JudgeVerdict,
    /// Track the description ended up in.
    pub track: usize,
    pub created: bool,
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DsuState {
    pub tracks: Vec<CharacterTrack>,
    pub log: Vec<VerdictRecord>,
    /// Last fully processed frame, 0 before the first.
    pub last_frame: u32,
}

pub struct DynamicSequenceUpdater<'j> {
    judge: &'j dyn Judge,
    threshold: f64,
    criterion: Criterion,
    state: DsuState,
}

impl<'j> DynamicSequenceUpdater<'j> {
    pub fn new(judge: &'j dyn Judge, threshold: f64) -> Result<Self, ExtractionError> {
        Self::resume(judge, threshold, DsuState::default())
    }

    pub fn resume(
        judge: &'j dyn Judge,
        threshold: f64,
        state: DsuState,
    ) -> Result<Self, ExtractionError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(ExtractionError::InvalidThreshold(threshold));
        }
        Ok(Self {
            judge,
            threshold,
            criterion: Criterion::Unrestricted,
            state,
        })
    }

    /// Restricts what the judge sees; see [`Criterion::prepare`].
    pub fn with_criterion(mut self, criterion: Criterion) -> Self {
        self.criterion = criterion;
        self
    }

    pub fn state(&self) -> &DsuState {
        &self.state
    }

    pub fn last_frame(&self) -> u32 {
        self.state.last_frame
    }

    /// Processes one frame. On error the state is left as it was before
    /// the frame, and the error carries a copy of it.
    pub fn process_frame(
        &mut self,
        frame: u32,
        characters: &[CharacterDescription],
    ) -> Result<(), ExtractionError> {
        if frame <= self.state.last_frame {
            return Err(ExtractionError::Structure(format!(
                "frame {frame} processed after frame {}",
                self.state.last_frame
            )));
        }
        let mut tracks = self.state.tracks.clone();
        let mut log = Vec::with_capacity(characters.len());
        let existing = tracks.len();
        let mut used = vec![false; existing];
        for cand in characters {
            let eligible: Vec<usize> = (0..existing).filter(|&i| !used[i]).collect();
            let shown = self.criterion.prepare(cand);
            let known: Vec<CharacterDescription> = eligible
                .iter()
                .map(|&i| self.criterion.prepare(&tracks[i].canonical))
                .collect();
            let verdict = match judge_known(&known, &shown, self.judge) {
                Ok(v) => v,
                Err(e) => {
                    return Err(ExtractionError::Interrupted {
                        frame,
                        source: Box::new(e),
                        partial: Box::new(self.state.clone()),
                    })
                }
            };
            let accepted = match (verdict.candidate_index, verdict.score) {
                (Some(k), Some(s)) if s > self.threshold => Some(eligible[k]),
                _ => None,
            };
            let (track, created) = match accepted {
                Some(t) => {
                    used[t] = true;
                    tracks[t].history.push((frame, cand.clone()));
                    tracks[t].canonical = cand.clone();
                    (t, false)
                }
                None => {
                    tracks.push(CharacterTrack::open(frame, cand.clone()));
                    (tracks.len() - 1, true)
                }
            };
            log.push(VerdictRecord {
                frame,
                judged_text: shown.surface_text,
                eligible,
                verdict,
                track,
                created,
            });
        }
        self.state.tracks = tracks;
        self.state.log.extend(log);
        self.state.last_frame = frame;
        Ok(())
    }

    pub fn finish(self) -> (Vec<IdSequence>, DsuState) {
        (track_sequences(&self.state.tracks), self.state)
    }
}

/// Runs the updater over every segment of `caption`.
pub fn dynamic_sequence_update(
    caption: &StructuredCaption,
    judge: &dyn Judge,
    threshold: f64,
) -> Result<Vec<IdSequence>, ExtractionError> {
    let mut u = DynamicSequenceUpdater::new(judge, threshold)?;
    for seg in &caption.segments {
        u.process_frame(seg.frame_index, &seg.characters)?;
    }
    Ok(u.finish().0)
}
