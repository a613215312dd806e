import { ApiClient } from './api'
import { renderApp } from './render'
import { SessionStore } from './store'

/** Resolve the API base URL at runtime: ?api=... query parameter first,
 * then a window-level override, then same-origin. */
export function resolveBaseUrl(): string {
  const params = new URLSearchParams(window.location.search)
  const fromQuery = params.get('api')
  if (fromQuery) return fromQuery
  const override = (window as unknown as { API_BASE_URL?: string }).API_BASE_URL
  if (override) return override
  return window.location.origin
}

export function mount(root: HTMLElement): SessionStore {
  const api = new ApiClient(resolveBaseUrl())
  const store = new SessionStore(api)

  const view = document.createElement('div')
  view.id = 'view'
  const form = document.createElement('form')
  form.innerHTML =
    '<input id="message" type="text" autocomplete="off" placeholder="Describe your symptoms" />' +
    '<input id="image-ref" type="text" placeholder="Image reference (optional)" />' +
    '<button id="send" type="submit">Send</button>' +
    '<button id="new-session" type="button">New session</button>'
  root.append(view, form)

  const input = form.querySelector<HTMLInputElement>('#message')!
  const imageRef = form.querySelector<HTMLInputElement>('#image-ref')!
  const send = form.querySelector<HTMLButtonElement>('#send')!

  store.subscribe((state) => {
    view.innerHTML = renderApp(state)
    send.disabled = state.inFlight || state.phase === 'terminated'
  })

  form.addEventListener('submit', (ev) => {
    ev.preventDefault()
    void store.sendMessage(input.value, imageRef.value || undefined).then(() => {
      input.value = ''
      input.focus()
    })
  })
  form.querySelector('#new-session')!.addEventListener('click', () => {
    void store.startSession().then(() => input.focus())
  })

  void store.startSession().then(() => input.focus())
  return store
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  mount(document.getElementById('app')!)
}
