import type { SessionViewState } from './store'

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;')
}

export function renderPhaseBadge(state: SessionViewState): string {
  const phase = state.phase ?? 'no session'
  return `<span class="phase-badge phase-${escapeHtml(phase)}">${escapeHtml(phase)}</span>`
}

export function renderMessages(state: SessionViewState): string {
  const bubbles = state.messages.map(
    (m) =>
      `<div class="bubble ${m.role} kind-${escapeHtml(m.kind)}">${escapeHtml(m.text)}</div>`,
  )
  return `<div class="transcript">${bubbles.join('')}</div>`
}

export function renderSymptomPanel(state: SessionViewState): string {
  const rows = state.baseEntries.map(
    (e) =>
      `<tr><td class="symptom">${escapeHtml(e.symptom)}</td>` +
      `<td class="status status-${escapeHtml(e.status)}">${escapeHtml(e.status)}</td></tr>`,
  )
  return `<table class="symptom-panel"><tbody>${rows.join('')}</tbody></table>`
}

/** Candidate rows in exactly the server's order; rejected ones are flagged,
 * never hidden, so the ranking decision stays inspectable. */
export function renderCandidatePanel(state: SessionViewState): string {
  const rows = state.candidates.map((c) => {
    const cls = c.rejected ? 'candidate rejected' : 'candidate'
    const reason = c.rejected ? ` <em class="reason">${escapeHtml(c.reason ?? '')}</em>` : ''
    return (
      `<li class="${cls}" data-symptom="${escapeHtml(c.target_symptom)}">` +
      `<span class="score">${c.score}</span> ${escapeHtml(c.text)}${reason}</li>`
    )
  })
  return `<ol class="candidate-panel">${rows.join('')}</ol>`
}

export function renderReportSection(state: SessionViewState): string {
  if (state.report === null) return ''
  return `<section class="report"><h2>Diagnostic report</h2><pre>${escapeHtml(
    state.report,
  )}</pre></section>`
}

export function renderBanner(state: SessionViewState): string {
  if (state.banner === null) return ''
  return `<div class="banner" role="alert">${escapeHtml(state.banner)}` +
    `<button class="retry">Retry</button></div>`
}

export function renderValidation(state: SessionViewState): string {
  if (state.validationError === null) return ''
  return `<p class="validation-error">${escapeHtml(state.validationError)}</p>`
}

export function renderApp(state: SessionViewState): string {
  return [
    renderBanner(state),
    `<header>${renderPhaseBadge(state)}</header>`,
    renderMessages(state),
    renderValidation(state),
    `<aside>${renderSymptomPanel(state)}${renderCandidatePanel(state)}</aside>`,
    renderReportSection(state),
  ].join('\n')
}
