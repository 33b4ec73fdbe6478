//! Synthetic cohort generator for desk-scale verification.
//!
//! Each patient carries a latent binary state. The signal plan decides, per
//! modality, which patients' values clearly reveal that state and which get
//! near-cutoff ambiguous values. Ambiguous values alternate sides of the
//! cutoff so a hand-written threshold oracle scores exactly 50% on them,
//! making per-modality oracle accuracy an exact function of the reveal
//! fraction. Class counts, availability masks, and demographic strata are
//! allocated (not sampled) so the configured totals reproduce exactly.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::cohort::{
    BinaryLabel, BiochemFlag, ClinicalNote, Cohort, FoodIntake, LabPanel, NoteType, NotesBundle,
    PatientRecord, RaceEthnicity, Sex, SkeletalMuscleMeasurements,
};
use crate::notes::{ChatEndpoint, ChatRequest, NotesError, QuestionBattery};
use crate::LBS_TO_KG;

/// Marker sentences tying battery questions to generated note text:
/// `(question id, yes phrase, no phrase)`.
pub const MARKER_VOCABULARY: [(&str, &str, &str); 8] = [
    (
        "q01",
        "Exam shows notable temporal muscle wasting and reduced muscle bulk.",
        "Muscle bulk appears preserved without signs of wasting.",
    ),
    (
        "q04",
        "Performance status has declined with ECOG now at 3.",
        "Performance status remains excellent with ECOG 0.",
    ),
    (
        "q07",
        "The patient reports unintentional weight loss over recent months.",
        "Weight has remained stable with no unintentional loss.",
    ),
    (
        "q08",
        "Documented weight loss exceeds five percent over the past six months.",
        "Weight change is under two percent over the past six months.",
    ),
    (
        "q11",
        "Laboratory review shows anemia with low hemoglobin.",
        "Hemoglobin is within normal limits without anemia.",
    ),
    (
        "q13",
        "The patient describes early satiety after only a few bites.",
        "No early satiety; the patient finishes full meals.",
    ),
    (
        "q16",
        "Appetite is poor with frank anorexia noted.",
        "Appetite is good and oral intake is adequate.",
    ),
    (
        "q21",
        "The patient endorses profound fatigue and weakness.",
        "Energy levels are good without significant fatigue.",
    ),
];

/// Suggestive sentences that never answer a battery question directly; they
/// carry signal only through the notes-text embedding route.
pub const SOFT_CACHECTIC_PHRASES: [&str; 3] = [
    "Overall trajectory is concerning for progressive catabolic decline.",
    "Clinical picture suggests ongoing nutritional deterioration.",
    "Family describes the patient as visibly thinner and frailer.",
];

pub const SOFT_NON_CACHECTIC_PHRASES: [&str; 3] = [
    "Overall trajectory appears stable from a nutritional standpoint.",
    "Clinical picture suggests preserved nutritional reserve.",
    "Family describes the patient as active and eating well.",
];

const NOTE_FILLER: &str =
    "Routine oncology follow-up visit; vital signs reviewed and medications reconciled.";
const NOTE_FILLER_2: &str = "Plan discussed with the patient; return precautions given.";

const NOTE_TYPES: [NoteType; 8] = [
    NoteType::NutritionAssessmentForm,
    NoteType::NutritionDiagnosisComments,
    NoteType::ProgressNote,
    NoteType::DietaryAssessment,
    NoteType::InterVisitNote,
    NoteType::AmbulatoryCareNote,
    NoteType::HistoryAndPhysicalNote,
    NoteType::PatientAssessment,
];

/// Modality availability rates; counts are allocated exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AvailabilityRates {
    pub albumin: f64,
    pub neutrophils: f64,
    pub lymphocytes: f64,
    pub bun: f64,
    pub creatinine: f64,
    /// Fraction of patients at the site that has clinical notes and CT.
    pub site_a_fraction: f64,
    pub notes_in_site_a: f64,
    pub image_in_site_a: f64,
}

impl Default for AvailabilityRates {
    fn default() -> Self {
        Self {
            albumin: 216.0 / 236.0,
            neutrophils: 167.0 / 236.0,
            lymphocytes: 170.0 / 236.0,
            bun: 221.0 / 236.0,
            creatinine: 218.0 / 236.0,
            site_a_fraction: 131.0 / 236.0,
            notes_in_site_a: 1.0,
            image_in_site_a: 1.0,
        }
    }
}

impl AvailabilityRates {
    /// Everything available everywhere; used for oracle sanity checks and
    /// ablation cohorts where every modality must be able to contribute.
    pub fn full() -> Self {
        Self {
            albumin: 1.0,
            neutrophils: 1.0,
            lymphocytes: 1.0,
            bun: 1.0,
            creatinine: 1.0,
            site_a_fraction: 1.0,
            notes_in_site_a: 1.0,
            image_in_site_a: 1.0,
        }
    }
}

/// Which latent factors each modality reveals, and how cleanly.
///
/// A patient whose signal rank falls below `round(reveal · n)` gets values a
/// clear margin past the cutoff on the side of their latent state; everyone
/// else gets near-cutoff values whose side alternates between matching and
/// contradicting the latent state. Reveal sets are nested (SM ⊂ labs ⊂
/// answers ⊂ text) so each added modality contributes complementary coverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalPlan {
    pub sm_reveal: f64,
    pub labs_reveal: f64,
    pub notes_answer_reveal: f64,
    pub notes_text_reveal: f64,
    /// Probability that a revealed patient's signal is flipped to the wrong
    /// side (confident-looking contradictions).
    pub noise: f64,
    pub smi_cutoff: f64,
    pub sm_hu_cutoff: f64,
    pub albumin_cutoff: f64,
    pub nlr_cutoff: f64,
    pub ucr_cutoff: f64,
}

impl Default for SignalPlan {
    fn default() -> Self {
        Self {
            sm_reveal: 0.50,
            labs_reveal: 0.70,
            notes_answer_reveal: 0.85,
            notes_text_reveal: 0.97,
            noise: 0.0,
            smi_cutoff: 41.0,
            sm_hu_cutoff: 35.0,
            albumin_cutoff: 3.5,
            nlr_cutoff: 4.0,
            ucr_cutoff: 20.0,
        }
    }
}

impl SignalPlan {
    pub fn reveal_count(fraction: f64, n: usize) -> usize {
        (fraction * n as f64).round() as usize
    }

    /// Exact oracle-correct count at noise 0: every revealed patient plus the
    /// matching half (rounded up) of the ambiguous ones.
    pub fn predicted_oracle_correct(reveal_fraction: f64, n: usize) -> usize {
        let c = Self::reveal_count(reveal_fraction, n);
        c + (n - c).div_ceil(2)
    }

    pub fn predicted_oracle_accuracy(reveal_fraction: f64, n: usize) -> f64 {
        Self::predicted_oracle_correct(reveal_fraction, n) as f64 / n as f64
    }
}

/// Generator configuration. Defaults mirror the published cohort: 236
/// patients, 152/84 class split, and the demographic and availability figures
/// of the source tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub cachectic_fraction: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub weight_mean_kg: f64,
    pub weight_sd_kg: f64,
    pub height_mean_m: f64,
    /// The published height SD (0.59 m) is physiologically implausible; the
    /// default uses 0.08 m and the generator clamps to [1.40, 2.10].
    pub height_sd_m: f64,
    pub female_fraction: f64,
    /// Fractions for the four race/ethnicity buckets (white, hispanic, black,
    /// other); allocated by largest remainder.
    pub race_fractions: [f64; 4],
    /// Weights over TNM stage codes 1..=9 plus missing (last entry).
    pub tnm_weights: [f64; 10],
    /// Fraction of stageable patients whose staging output matches the latent
    /// state (mismatches are allocated exactly).
    pub staging_agreement: f64,
    /// Fraction with full four-stage inputs (ECOG, food intake, flags).
    pub four_stage_inputs_fraction: f64,
    /// Fraction with no staging inputs at all (falls back to the gold label).
    pub unstageable_fraction: f64,
    pub availability: AvailabilityRates,
    pub signal_plan: SignalPlan,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 236,
            cachectic_fraction: 152.0 / 236.0,
            age_mean: 69.05,
            age_sd: 10.13,
            weight_mean_kg: 166.95 * LBS_TO_KG,
            weight_sd_kg: 37.88 * LBS_TO_KG,
            height_mean_m: 1.69,
            height_sd_m: 0.08,
            female_fraction: 119.0 / 236.0,
            race_fractions: [
                176.0 / 236.0,
                36.0 / 236.0,
                24.0 / 236.0,
                0.0,
            ],
            tnm_weights: [15.0, 27.0, 26.0, 1.0, 17.0, 16.0, 29.0, 71.0, 13.0, 21.0],
            staging_agreement: 0.95,
            four_stage_inputs_fraction: 0.6,
            unstageable_fraction: 0.02,
            availability: AvailabilityRates::default(),
            signal_plan: SignalPlan::default(),
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), EvalError> {
        if self.n_patients == 0 {
            return Err(EvalError::InvalidConfig("n_patients must be > 0".into()));
        }
        let fractions = [
            ("cachectic_fraction", self.cachectic_fraction),
            ("female_fraction", self.female_fraction),
            ("staging_agreement", self.staging_agreement),
            ("four_stage_inputs_fraction", self.four_stage_inputs_fraction),
            ("unstageable_fraction", self.unstageable_fraction),
            ("albumin availability", self.availability.albumin),
            ("neutrophils availability", self.availability.neutrophils),
            ("lymphocytes availability", self.availability.lymphocytes),
            ("bun availability", self.availability.bun),
            ("creatinine availability", self.availability.creatinine),
            ("site_a_fraction", self.availability.site_a_fraction),
            ("notes_in_site_a", self.availability.notes_in_site_a),
            ("image_in_site_a", self.availability.image_in_site_a),
            ("sm_reveal", self.signal_plan.sm_reveal),
            ("labs_reveal", self.signal_plan.labs_reveal),
            ("notes_answer_reveal", self.signal_plan.notes_answer_reveal),
            ("notes_text_reveal", self.signal_plan.notes_text_reveal),
            ("noise", self.signal_plan.noise),
        ];
        for (name, value) in fractions {
            if !(0.0..=1.0).contains(&value) {
                return Err(EvalError::InvalidConfig(format!(
                    "{name} = {value} is outside [0, 1]"
                )));
            }
        }
        if self.four_stage_inputs_fraction + self.unstageable_fraction > 1.0 {
            return Err(EvalError::InvalidConfig(
                "four_stage_inputs_fraction + unstageable_fraction exceeds 1".into(),
            ));
        }
        for (name, sd) in [("age_sd", self.age_sd), ("weight_sd_kg", self.weight_sd_kg), ("height_sd_m", self.height_sd_m)] {
            if sd < 0.0 {
                return Err(EvalError::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// `count` trues scattered over `n` slots by a seeded shuffle.
fn alloc_flags(n: usize, count: usize, rng: &mut ChaCha20Rng) -> Vec<bool> {
    let mut flags = vec![false; n];
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    for &i in idx.iter().take(count.min(n)) {
        flags[i] = true;
    }
    flags
}

fn largest_remainder_counts(fractions: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = fractions.iter().sum();
    let scaled: Vec<f64> = if total > 0.0 {
        fractions.iter().map(|f| f / total * n as f64).collect()
    } else {
        vec![0.0; fractions.len()]
    };
    let mut counts: Vec<usize> = scaled.iter().map(|&v| v.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = scaled[a] - scaled[a].floor();
        let fb = scaled[b] - scaled[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    counts
}

#[derive(Clone, Copy, PartialEq)]
enum StagingGroup {
    Unstageable,
    FourStageInputs,
    TwoStageOnly,
}

// The side a modality's values point to, and whether the margin is clear.
struct Face {
    cachectic: bool,
    revealed: bool,
}

fn face_for(
    latent_cachectic: bool,
    rank: usize,
    cutoff: usize,
    noise: f64,
    rng: &mut ChaCha20Rng,
) -> Face {
    if rank < cutoff {
        let flipped = noise > 0.0 && rng.gen::<f64>() < noise;
        Face {
            cachectic: latent_cachectic ^ flipped,
            revealed: true,
        }
    } else {
        let matching = (rank - cutoff).is_multiple_of(2);
        Face {
            cachectic: if matching {
                latent_cachectic
            } else {
                !latent_cachectic
            },
            revealed: false,
        }
    }
}

// Value on the face's side of `cutoff`: clear margin when revealed,
// near-cutoff otherwise. `below_means_cachectic` orients the inequality.
fn signal_value(
    cutoff: f64,
    face: &Face,
    below_means_cachectic: bool,
    clear: (f64, f64),
    narrow: (f64, f64),
    rng: &mut ChaCha20Rng,
) -> f64 {
    let (lo, hi) = if face.revealed { clear } else { narrow };
    let margin = rng.gen_range(lo..hi);
    let below = face.cachectic == below_means_cachectic;
    if below {
        cutoff - margin
    } else {
        cutoff + margin
    }
}

/// Generates a cohort with gold labels. Deterministic for a fixed config and
/// seed.
pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Cohort, EvalError> {
    cfg.validate()?;
    let n = cfg.n_patients;
    let plan = &cfg.signal_plan;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Exact allocations, each from its own shuffle of the patient slots.
    let latent = alloc_flags(n, (cfg.cachectic_fraction * n as f64).round() as usize, &mut rng);
    let female = alloc_flags(n, (cfg.female_fraction * n as f64).round() as usize, &mut rng);
    let race_counts = largest_remainder_counts(&cfg.race_fractions, n);
    let races: Vec<RaceEthnicity> = {
        let mut pool = Vec::with_capacity(n);
        for (race, &count) in RaceEthnicity::ALL.iter().zip(&race_counts) {
            pool.extend(std::iter::repeat_n(*race, count));
        }
        pool.shuffle(&mut rng);
        pool
    };

    // Signal rank: position in a seeded permutation; nested reveal sets are
    // prefixes of it.
    let rank_of: Vec<usize> = {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut rank = vec![0usize; n];
        for (position, &patient) in perm.iter().enumerate() {
            rank[patient] = position;
        }
        rank
    };

    let site_a = alloc_flags(
        n,
        (cfg.availability.site_a_fraction * n as f64).round() as usize,
        &mut rng,
    );
    let site_a_members: Vec<usize> = (0..n).filter(|&i| site_a[i]).collect();
    let notes_within = alloc_flags(
        site_a_members.len(),
        (cfg.availability.notes_in_site_a * site_a_members.len() as f64).round() as usize,
        &mut rng,
    );
    let image_within = alloc_flags(
        site_a_members.len(),
        (cfg.availability.image_in_site_a * site_a_members.len() as f64).round() as usize,
        &mut rng,
    );
    let mut has_notes = vec![false; n];
    let mut has_image = vec![false; n];
    for (slot, &patient) in site_a_members.iter().enumerate() {
        has_notes[patient] = notes_within[slot];
        has_image[patient] = image_within[slot];
    }

    let missing_mask = |rate: f64, rng: &mut ChaCha20Rng| {
        let available = (rate * n as f64).round() as usize;
        alloc_flags(n, n - available, rng)
    };
    let albumin_missing = missing_mask(cfg.availability.albumin, &mut rng);
    let neutrophil_missing = missing_mask(cfg.availability.neutrophils, &mut rng);
    let lymphocyte_missing = missing_mask(cfg.availability.lymphocytes, &mut rng);
    let bun_missing = missing_mask(cfg.availability.bun, &mut rng);
    let creatinine_missing = missing_mask(cfg.availability.creatinine, &mut rng);

    // Staging groups, then exact agreement flips among the stageable.
    let groups: Vec<StagingGroup> = {
        let unstageable = (cfg.unstageable_fraction * n as f64).round() as usize;
        let with_four_stage = (cfg.four_stage_inputs_fraction * n as f64).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut groups = vec![StagingGroup::TwoStageOnly; n];
        for &i in order.iter().take(unstageable) {
            groups[i] = StagingGroup::Unstageable;
        }
        for &i in order.iter().skip(unstageable).take(with_four_stage) {
            groups[i] = StagingGroup::FourStageInputs;
        }
        groups
    };
    let staged_flip: Vec<bool> = {
        let stageable: Vec<usize> = (0..n)
            .filter(|&i| groups[i] != StagingGroup::Unstageable)
            .collect();
        let flips = ((1.0 - cfg.staging_agreement) * stageable.len() as f64).round() as usize;
        let mut order = stageable.clone();
        order.shuffle(&mut rng);
        let mut flip = vec![false; n];
        for &i in order.iter().take(flips) {
            flip[i] = true;
        }
        flip
    };

    let age_dist = Normal::new(cfg.age_mean, cfg.age_sd.max(1e-12))
        .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
    let weight_dist = Normal::new(cfg.weight_mean_kg, cfg.weight_sd_kg.max(1e-12))
        .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
    let height_dist = Normal::new(cfg.height_mean_m, cfg.height_sd_m.max(1e-12))
        .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;

    let sm_cutoff_count = SignalPlan::reveal_count(plan.sm_reveal, n);
    let labs_cutoff_count = SignalPlan::reveal_count(plan.labs_reveal, n);
    let answers_cutoff_count = SignalPlan::reveal_count(plan.notes_answer_reveal, n);
    let text_cutoff_count = SignalPlan::reveal_count(plan.notes_text_reveal, n);
    let tnm_total: f64 = cfg.tnm_weights.iter().sum();

    let mut cohort = Vec::with_capacity(n);
    for i in 0..n {
        let patient_id = format!("P{:04}", i + 1);
        let latent_c = latent[i];
        let rank = rank_of[i];

        let age = age_dist.sample(&mut rng).clamp(18.0, 100.0).round();
        let height = height_dist.sample(&mut rng).clamp(1.40, 2.10);
        let weight = weight_dist.sample(&mut rng).clamp(35.0, 200.0);
        let bmi = weight / (height * height);

        // Skeletal muscle: available for everyone (cohort selection criterion).
        let sm_face = face_for(latent_c, rank, sm_cutoff_count, plan.noise, &mut rng);
        let smi = signal_value(
            plan.smi_cutoff,
            &sm_face,
            true,
            (3.0, 9.0),
            (0.05, 0.5),
            &mut rng,
        );
        let sm_hu = signal_value(
            plan.sm_hu_cutoff,
            &sm_face,
            true,
            (3.0, 8.0),
            (0.1, 1.0),
            &mut rng,
        );
        let sma = smi * height * height;

        // Labs: one face drives all five values coherently.
        let labs_face = face_for(latent_c, rank, labs_cutoff_count, plan.noise, &mut rng);
        let albumin = signal_value(
            plan.albumin_cutoff,
            &labs_face,
            true,
            (0.3, 1.0),
            (0.02, 0.15),
            &mut rng,
        );
        let nlr = signal_value(
            plan.nlr_cutoff,
            &labs_face,
            false,
            (1.0, 3.0),
            (0.05, 0.4),
            &mut rng,
        );
        let lymphocyte = rng.gen_range(1.2..2.4);
        let neutrophil = nlr * lymphocyte;
        let ucr = signal_value(
            plan.ucr_cutoff,
            &labs_face,
            false,
            (3.0, 12.0),
            (0.2, 1.5),
            &mut rng,
        );
        let creatinine = rng.gen_range(0.7..1.2);
        let bun = ucr * creatinine;

        let labs = LabPanel {
            albumin_g_dl: (!albumin_missing[i]).then_some(albumin),
            neutrophil_abs_k_ul: (!neutrophil_missing[i]).then_some(neutrophil),
            lymphocyte_abs_k_ul: (!lymphocyte_missing[i]).then_some(lymphocyte),
            bun_mg_dl: (!bun_missing[i]).then_some(bun),
            creatinine_mg_dl: (!creatinine_missing[i]).then_some(creatinine),
        };

        // Staging inputs aimed at the intended staged label.
        let staged_cachectic = latent_c ^ staged_flip[i];
        let group = groups[i];
        let loss_pct = if staged_cachectic {
            rng.gen_range(6.0..15.0)
        } else if bmi < 20.0 {
            rng.gen_range(-2.0..1.9)
        } else {
            rng.gen_range(-2.0..4.5)
        };
        let prior_weight = (group != StagingGroup::Unstageable)
            .then(|| weight / (1.0 - loss_pct / 100.0));
        let (ecog, food_intake, biochem_flags) = match group {
            StagingGroup::FourStageInputs => {
                if staged_cachectic {
                    let ecog = *[0u8, 1, 2, 3, 4].choose(&mut rng).unwrap();
                    (
                        Some(ecog),
                        Some(FoodIntake::Decreased),
                        Some(std::collections::BTreeSet::from([BiochemFlag::Anemia])),
                    )
                } else {
                    let ecog = *[0u8, 1, 2].choose(&mut rng).unwrap();
                    let decreased = rng.gen::<f64>() < 0.3;
                    (
                        Some(ecog),
                        Some(if decreased {
                            FoodIntake::Decreased
                        } else {
                            FoodIntake::Normal
                        }),
                        Some(std::collections::BTreeSet::new()),
                    )
                }
            }
            _ => (None, None, None),
        };

        // TNM stage sampled by the published distribution; last bucket is
        // missing.
        let tnm_stage_code = {
            let mut draw = rng.gen_range(0.0..tnm_total.max(1e-12));
            let mut code = None;
            for (idx, &w) in cfg.tnm_weights.iter().enumerate() {
                if draw < w {
                    code = (idx < 9).then(|| idx as i32 + 1);
                    break;
                }
                draw -= w;
            }
            code
        };

        // Notes: markers answer battery questions, soft phrases carry
        // text-only signal, fillers carry none.
        let answers_face = face_for(latent_c, rank, answers_cutoff_count, plan.noise, &mut rng);
        let notes = if has_notes[i] {
            let mut marker_text = String::from(NOTE_FILLER);
            if answers_face.revealed {
                for (_, yes_phrase, no_phrase) in MARKER_VOCABULARY {
                    marker_text.push(' ');
                    marker_text.push_str(if answers_face.cachectic {
                        yes_phrase
                    } else {
                        no_phrase
                    });
                }
            } else {
                // Ambiguous: three markers on the face side, two against.
                for (slot, (_, yes_phrase, no_phrase)) in
                    MARKER_VOCABULARY.iter().take(5).enumerate()
                {
                    let toward_cachectic = if slot < 3 {
                        answers_face.cachectic
                    } else {
                        !answers_face.cachectic
                    };
                    marker_text.push(' ');
                    marker_text.push_str(if toward_cachectic { yes_phrase } else { no_phrase });
                }
            }
            let mut notes = vec![ClinicalNote {
                note_type: NOTE_TYPES[i % NOTE_TYPES.len()],
                text: marker_text,
                date: Some(format!("2024-{:02}-{:02}", i % 12 + 1, i % 28 + 1)),
            }];
            let in_text_band = rank >= answers_cutoff_count && rank < text_cutoff_count;
            if in_text_band {
                let phrases = if latent_c {
                    SOFT_CACHECTIC_PHRASES
                } else {
                    SOFT_NON_CACHECTIC_PHRASES
                };
                notes.push(ClinicalNote {
                    note_type: NOTE_TYPES[(i + 3) % NOTE_TYPES.len()],
                    text: format!("{} {NOTE_FILLER_2}", phrases.join(" ")),
                    date: Some(format!("2024-{:02}-{:02}", i % 12 + 1, (i + 7) % 28 + 1)),
                });
            }
            Some(NotesBundle { notes })
        } else {
            None
        };

        let image_ref = if has_image[i] {
            let slices = rng.gen_range(1..=3);
            let refs: Vec<String> = (0..slices)
                .map(|k| format!("ct/{patient_id}/l3/{k}"))
                .collect();
            Some(refs.join(";"))
        } else {
            None
        };

        cohort.push(PatientRecord {
            patient_id,
            age_years: Some(age),
            sex: Some(if female[i] { Sex::Female } else { Sex::Male }),
            race_ethnicity: Some(races[i]),
            height_m: Some(height),
            weight_kg: Some(weight),
            prior_weight_kg_6mo: prior_weight,
            bmi: Some((bmi * 100.0).round() / 100.0),
            tnm_stage_code,
            labs,
            sm: SkeletalMuscleMeasurements {
                sma_cm2: Some(sma),
                sm_hu_mean: Some(sm_hu),
                smi_precomputed: None,
            },
            notes,
            image_ref,
            ecog,
            food_intake,
            biochem_flags,
            gold_label: Some(if latent_c {
                BinaryLabel::Cachectic
            } else {
                BinaryLabel::NonCachectic
            }),
        });
    }
    Ok(cohort)
}

/// Splits a generated `image_ref` into its slice references.
pub fn image_slice_refs(image_ref: &str) -> Vec<String> {
    image_ref
        .split(';')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Deterministic chat endpoint that answers the battery by scanning the
/// prompt for the marker vocabulary. It stands in for a local extraction
/// model: marker phrases yield yes/no with the phrase quoted as the
/// reference, soft phrases yield a not-given answer whose reasoning quotes
/// the suggestive text, and everything else is not-given.
pub struct MarkerStubEndpoint {
    battery: QuestionBattery,
}

impl MarkerStubEndpoint {
    pub fn new(battery: QuestionBattery) -> Self {
        Self { battery }
    }
}

impl ChatEndpoint for MarkerStubEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, NotesError> {
        let prompt = request
            .messages
            .first()
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let soft_found: Vec<&str> = SOFT_CACHECTIC_PHRASES
            .iter()
            .chain(SOFT_NON_CACHECTIC_PHRASES.iter())
            .filter(|p| prompt.contains(*p))
            .copied()
            .collect();
        let last_id = self.battery.questions.last().map(|q| q.id.clone());
        let entries: Vec<serde_json::Value> = self
            .battery
            .questions
            .iter()
            .map(|q| {
                let marker = MARKER_VOCABULARY.iter().find(|(id, _, _)| *id == q.id);
                if let Some((_, yes_phrase, no_phrase)) = marker {
                    if prompt.contains(yes_phrase) {
                        return serde_json::json!({
                            "id": q.id,
                            "answer": "yes",
                            "reasoning": format!("The notes state: {yes_phrase}"),
                            "reference": yes_phrase,
                        });
                    }
                    if prompt.contains(no_phrase) {
                        return serde_json::json!({
                            "id": q.id,
                            "answer": "no",
                            "reasoning": format!("The notes state: {no_phrase}"),
                            "reference": no_phrase,
                        });
                    }
                }
                if Some(&q.id) == last_id.as_ref() && !soft_found.is_empty() {
                    let quoted = soft_found.join(" ");
                    return serde_json::json!({
                        "id": q.id,
                        "answer": "not-given",
                        "reasoning": format!(
                            "The notes describe the overall trajectory without naming a syndrome: {quoted}"
                        ),
                        "reference": quoted,
                    });
                }
                serde_json::json!({
                    "id": q.id,
                    "answer": "not-given",
                    "reasoning": "",
                    "reference": "",
                })
            })
            .collect();
        Ok(serde_json::to_string(&entries).expect("entries serialize"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notes::{default_battery, extract_answers, tabularize, ClientConfig};

    fn full_availability_config() -> SynthConfig {
        SynthConfig {
            availability: AvailabilityRates::full(),
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg, 7).unwrap();
        let b = generate(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate(&cfg, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn exact_label_allocation() {
        let cohort = generate(&SynthConfig::default(), 7).unwrap();
        let cachectic = cohort
            .iter()
            .filter(|r| r.gold_label == Some(BinaryLabel::Cachectic))
            .count();
        assert_eq!(cachectic, 152);
        assert_eq!(cohort.len() - cachectic, 84);
    }

    #[test]
    fn exact_albumin_missing_count() {
        let cohort = generate(&SynthConfig::default(), 7).unwrap();
        let missing = cohort
            .iter()
            .filter(|r| r.labs.albumin_g_dl.is_none())
            .count();
        assert_eq!(missing, 20);
    }

    #[test]
    fn site_a_gates_notes_and_images() {
        let cohort = generate(&SynthConfig::default(), 7).unwrap();
        let with_notes = cohort.iter().filter(|r| r.notes.is_some()).count();
        let with_image = cohort.iter().filter(|r| r.image_ref.is_some()).count();
        assert_eq!(with_notes, 131);
        assert_eq!(with_image, 131);
    }

    #[test]
    fn age_mean_near_target() {
        let cohort = generate(&SynthConfig::default(), 7).unwrap();
        let mean =
            cohort.iter().filter_map(|r| r.age_years).sum::<f64>() / cohort.len() as f64;
        assert!((mean - 69.05).abs() / 69.05 < 0.05, "mean {mean}");
    }

    #[test]
    fn staging_matches_latent_at_agreement_rate() {
        use crate::staging::{assign_stage, FourStageRuleTable, SystemUsed};
        let cfg = SynthConfig::default();
        let cohort = generate(&cfg, 7).unwrap();
        let rules = FourStageRuleTable::default();
        let mut agree = 0usize;
        let mut stageable = 0usize;
        let mut gold_fallback = 0usize;
        for record in &cohort {
            let a = assign_stage(record, &rules).unwrap();
            if a.system_used == SystemUsed::GoldLabel {
                gold_fallback += 1;
                continue;
            }
            stageable += 1;
            if Some(a.binary) == record.gold_label {
                agree += 1;
            }
        }
        let expected_flips =
            ((1.0 - cfg.staging_agreement) * stageable as f64).round() as usize;
        assert_eq!(stageable - agree, expected_flips);
        assert_eq!(gold_fallback, (0.02f64 * 236.0).round() as usize);
    }

    #[test]
    fn sm_oracle_matches_predicted_accuracy() {
        let cfg = full_availability_config();
        let cohort = generate(&cfg, 11).unwrap();
        let correct = cohort
            .iter()
            .filter(|r| {
                let h = r.height_m.unwrap();
                let smi = r.sm.sma_cm2.unwrap() / (h * h);
                let says_cachectic = smi < cfg.signal_plan.smi_cutoff;
                says_cachectic == (r.gold_label == Some(BinaryLabel::Cachectic))
            })
            .count();
        assert_eq!(
            correct,
            SignalPlan::predicted_oracle_correct(cfg.signal_plan.sm_reveal, cohort.len())
        );
    }

    #[test]
    fn labs_oracle_matches_predicted_accuracy() {
        let cfg = full_availability_config();
        let cohort = generate(&cfg, 11).unwrap();
        let correct = cohort
            .iter()
            .filter(|r| {
                let says_cachectic =
                    r.labs.albumin_g_dl.unwrap() < cfg.signal_plan.albumin_cutoff;
                says_cachectic == (r.gold_label == Some(BinaryLabel::Cachectic))
            })
            .count();
        assert_eq!(
            correct,
            SignalPlan::predicted_oracle_correct(cfg.signal_plan.labs_reveal, cohort.len())
        );
    }

    #[test]
    fn answers_oracle_matches_predicted_accuracy() {
        let cfg = full_availability_config();
        let cohort = generate(&cfg, 11).unwrap();
        let battery = default_battery();
        let endpoint = MarkerStubEndpoint::new(battery.clone());
        let client_cfg = ClientConfig::default();
        let correct = cohort
            .iter()
            .filter(|r| {
                let result = extract_answers(
                    &r.patient_id,
                    r.notes.as_ref(),
                    &battery,
                    &endpoint,
                    &client_cfg,
                )
                .unwrap();
                let row = tabularize(&result);
                let yes = row.iter().filter(|&&v| v == 1).count();
                let no = row.iter().filter(|&&v| v == 0).count();
                let says_cachectic = yes > no;
                says_cachectic == (r.gold_label == Some(BinaryLabel::Cachectic))
            })
            .count();
        assert_eq!(
            correct,
            SignalPlan::predicted_oracle_correct(
                cfg.signal_plan.notes_answer_reveal,
                cohort.len()
            )
        );
    }

    #[test]
    fn soft_phrases_only_in_text_band() {
        let cfg = full_availability_config();
        let cohort = generate(&cfg, 11).unwrap();
        let n = cohort.len();
        let answers_cutoff = SignalPlan::reveal_count(cfg.signal_plan.notes_answer_reveal, n);
        let text_cutoff = SignalPlan::reveal_count(cfg.signal_plan.notes_text_reveal, n);
        let mut in_band = 0usize;
        for record in &cohort {
            let text: String = record
                .notes
                .as_ref()
                .map(|b| {
                    b.notes
                        .iter()
                        .map(|note| note.text.clone())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .unwrap_or_default();
            let has_soft = SOFT_CACHECTIC_PHRASES
                .iter()
                .chain(SOFT_NON_CACHECTIC_PHRASES.iter())
                .any(|p| text.contains(p));
            if has_soft {
                in_band += 1;
                let is_cachectic = record.gold_label == Some(BinaryLabel::Cachectic);
                let expected: &[&str] = if is_cachectic {
                    &SOFT_CACHECTIC_PHRASES
                } else {
                    &SOFT_NON_CACHECTIC_PHRASES
                };
                assert!(expected.iter().all(|p| text.contains(p)));
            }
        }
        assert_eq!(in_band, text_cutoff - answers_cutoff);
    }

    #[test]
    fn generated_records_validate_cleanly() {
        let cohort = generate(&SynthConfig::default(), 7).unwrap();
        for record in &cohort {
            let report = crate::cohort::validate_record(record);
            assert!(report.is_empty(), "{}: {report:?}", record.patient_id);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SynthConfig {
            cachectic_fraction: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            generate(&cfg, 0),
            Err(EvalError::InvalidConfig(_))
        ));
    }

    #[test]
    fn marker_stub_quotes_soft_phrases_on_last_question() {
        let battery = default_battery();
        let endpoint = MarkerStubEndpoint::new(battery.clone());
        let bundle = NotesBundle {
            notes: vec![ClinicalNote {
                note_type: NoteType::ProgressNote,
                text: format!("{} {}", NOTE_FILLER, SOFT_CACHECTIC_PHRASES[0]),
                date: None,
            }],
        };
        let result = extract_answers(
            "P1",
            Some(&bundle),
            &battery,
            &endpoint,
            &ClientConfig::default(),
        )
        .unwrap();
        let last = result.answers.last().unwrap();
        assert_eq!(last.answer, crate::notes::Answer::NotGiven);
        assert!(last.reference.contains(SOFT_CACHECTIC_PHRASES[0]));
        let text = crate::notes::focused_text(&result);
        assert!(text.contains(SOFT_CACHECTIC_PHRASES[0]));
    }
}
