// Shapes of the session service's HTTP+JSON API.

export type Phase = 'collecting' | 'awaiting_visual' | 'diagnosing' | 'terminated'

export type ActionKind = 'ask' | 'request_image' | 'emit_report'

export interface CreateSessionRequest {
  medical_history?: string
  config?: Record<string, unknown>
  seed?: number
}

export interface CreateSessionResponse {
  session_id: string
}

export interface MessageRequest {
  text: string
  image_ref?: string | null
  image_embedding?: number[] | null
}

export interface MessageResponse {
  action: ActionKind
  question?: string
  target_symptom?: string
  report?: string
  label_probabilities?: number[]
}

export interface TranscriptTurn {
  role: 'patient' | 'system'
  kind: string
  text: string
  round: number
  timestamp: string
}

export interface SessionSnapshot {
  session_id: string
  phase: Phase
  round: number
  confidence: number
  target_disease: string | null
  base: Record<string, string>
  transcript: string[]
  termination_reason: string
  report_text: string | null
}

export interface Candidate {
  text: string
  target_symptom: string
  score: number
  rejected: boolean
  reason: string | null
}

export interface CandidatesResponse {
  candidates: Candidate[]
}

export interface ReportResponse {
  report: string
  label_probabilities: number[]
}
