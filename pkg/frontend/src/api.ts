import type {
  CandidatesResponse,
  CreateSessionRequest,
  CreateSessionResponse,
  MessageRequest,
  MessageResponse,
  ReportResponse,
  SessionSnapshot,
} from './types'

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message)
    this.name = 'ApiError'
  }
}

/** Thin fetch wrapper over the session service. Base URL is runtime
 * configuration, never compiled in. */
export class ApiClient {
  constructor(private baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/+$/, '')
  }

  setBaseUrl(url: string): void {
    this.baseUrl = url.replace(/\/+$/, '')
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await fetch(`${this.baseUrl}${path}`, {
      method,
      headers: body !== undefined ? { 'Content-Type': 'application/json' } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    })
    if (!resp.ok) {
      let detail = resp.statusText
      try {
        const parsed = await resp.json()
        if (parsed && typeof parsed.detail === 'string') detail = parsed.detail
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(resp.status, detail)
    }
    return (await resp.json()) as T
  }

  health(): Promise<{ status: string }> {
    return this.request('GET', '/healthz')
  }

  createSession(req: CreateSessionRequest = {}): Promise<CreateSessionResponse> {
    return this.request('POST', '/v1/sessions', req)
  }

  sendMessage(sessionId: string, req: MessageRequest): Promise<MessageResponse> {
    return this.request('POST', `/v1/sessions/${sessionId}/messages`, req)
  }

  getSession(sessionId: string): Promise<SessionSnapshot> {
    return this.request('GET', `/v1/sessions/${sessionId}`)
  }

  getCandidates(sessionId: string): Promise<CandidatesResponse> {
    return this.request('GET', `/v1/sessions/${sessionId}/candidates`)
  }

  getReport(sessionId: string): Promise<ReportResponse> {
    return this.request('GET', `/v1/sessions/${sessionId}/report`)
  }
}
