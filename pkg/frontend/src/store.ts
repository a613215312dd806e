import { ApiClient, ApiError } from './api'
import type { ActionKind, Candidate, Phase, TranscriptTurn } from './types'

export interface ChatMessage {
  role: 'patient' | 'system'
  kind: string
  text: string
}

export interface BaseEntry {
  symptom: string
  status: string
}

export interface SessionViewState {
  sessionId: string | null
  phase: Phase | null
  messages: ChatMessage[]
  baseEntries: BaseEntry[]
  candidates: Candidate[]
  report: string | null
  labelProbabilities: number[]
  lastAction: ActionKind | null
  banner: string | null
  validationError: string | null
  inFlight: boolean
}

function emptyState(): SessionViewState {
  return {
    sessionId: null,
    phase: null,
    messages: [],
    baseEntries: [],
    candidates: [],
    report: null,
    labelProbabilities: [],
    lastAction: null,
    banner: null,
    validationError: null,
    inFlight: false,
  }
}

type Listener = (state: SessionViewState) => void

/** Client-side session state. The server is the source of truth: after
 * every message the transcript, symptom base, and candidate panel are
 * refreshed from the snapshot endpoints rather than patched optimistically. */
export class SessionStore {
  private state: SessionViewState = emptyState()
  private listeners: Listener[] = []

  constructor(private api: ApiClient) {}

  getState(): SessionViewState {
    return this.state
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener)
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener)
    }
  }

  private update(patch: Partial<SessionViewState>): void {
    this.state = { ...this.state, ...patch }
    for (const listener of this.listeners) listener(this.state)
  }

  async startSession(history = '', seed = 0): Promise<void> {
    this.update({ ...emptyState(), inFlight: true })
    try {
      const { session_id } = await this.api.createSession({
        medical_history: history,
        seed,
      })
      this.update({ sessionId: session_id, phase: 'collecting', banner: null })
      await this.refresh()
    } catch (err) {
      this.update({ banner: describeError(err) })
    } finally {
      this.update({ inFlight: false })
    }
  }

  /** Sends one patient message. At most one request is in flight per
   * session; callers should disable the send control while inFlight. */
  async sendMessage(text: string, imageRef?: string): Promise<void> {
    if (this.state.inFlight || !this.state.sessionId) return
    if (!text.trim()) {
      this.update({ validationError: 'Message must not be empty.' })
      return
    }
    this.update({ inFlight: true, validationError: null, banner: null })
    try {
      const reply = await this.api.sendMessage(this.state.sessionId, {
        text,
        image_ref: imageRef ?? null,
      })
      this.update({ lastAction: reply.action })
      if (reply.action === 'emit_report') {
        this.update({
          report: reply.report ?? null,
          labelProbabilities: reply.label_probabilities ?? [],
        })
      }
      await this.refresh()
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.update({ banner: 'Session has ended.' })
      } else if (err instanceof ApiError && err.status === 422) {
        this.update({ validationError: err.message })
      } else {
        this.update({ banner: describeError(err) })
      }
    } finally {
      this.update({ inFlight: false })
    }
  }

  /** Re-pulls the transcript, symptom base, and candidate trail. */
  async refresh(): Promise<void> {
    if (!this.state.sessionId) return
    const snapshot = await this.api.getSession(this.state.sessionId)
    const { candidates } = await this.api.getCandidates(this.state.sessionId)
    const messages = snapshot.transcript.map((line) => {
      const turn = JSON.parse(line) as TranscriptTurn
      return { role: turn.role, kind: turn.kind, text: turn.text }
    })
    const baseEntries = Object.entries(snapshot.base)
      .map(([symptom, status]) => ({ symptom, status }))
      .sort((a, b) => a.symptom.localeCompare(b.symptom))
    this.update({
      phase: snapshot.phase,
      messages,
      baseEntries,
      candidates,
      report: snapshot.report_text ?? this.state.report,
    })
  }
}

function describeError(err: unknown): string {
  if (err instanceof ApiError) return `Service error ${err.status}: ${err.message}`
  if (err instanceof Error) return `Service unreachable: ${err.message}`
  return 'Service unreachable.'
}
