// API entity shapes, mirroring the service's canonical JSON.

export interface Demographics {
  age: number | null;
  preferred_language: string;
  health_literacy: string;
}

export interface ClinicalNote {
  kind: string;
  text: string;
}

export interface PatientProfile {
  demographics: Demographics;
  clinical: ClinicalNote[];
  interaction: {
    tone_preference: string;
    topics_discussed: string[];
    last_contact: string | null;
  };
}

export interface Patient {
  id: string;
  display_name: string;
  phone: string;
  preferred_modality: string;
  timezone: string;
  profile: PatientProfile;
}

export interface CallSchedule {
  id: string;
  patient_id: string;
  scheduled_at: string;
  instrument_ids: string[];
  status: string;
  attempt: number;
  max_attempts: number;
  next_attempt_at: string | null;
}

export interface TranscriptTurn {
  speaker: string;
  text: string;
  at: string;
}

export interface Transcript {
  session_id: string;
  schedule_id: string;
  modality: string;
  turns: TranscriptTurn[];
  started_at: string;
  ended_at: string | null;
}

export interface InstrumentResult {
  instrument_id: string;
  score: number | null;
  completeness: number;
  reasoning: string;
}

export interface CallSummary {
  schedule_id: string;
  duration_seconds: number;
  instrument_results: InstrumentResult[];
  emergency: { flagged: boolean; reason: string | null };
  callback_requested: boolean;
  overview: string;
}

export interface EscalationFlag {
  id: string;
  schedule_id: string;
  kind: string;
  turn_index: number;
  reason: string;
  acknowledged: boolean;
}

export interface Instrument {
  id: string;
  title: string;
  items: { id: string; prompt: string; scale_min: number; scale_max: number }[];
  scoring: string;
}

export interface ProblemDetails {
  code: string;
  message: string;
  field?: string;
  errors?: { code: string; field: string; message: string }[];
}
