// Single-page portal: Chat (intent submission), Experiments (repository
// query UI) and Live (event-stream view with attenuation steering).
// Hash-routed; every view is rebuilt from the API on navigation.

import { ApiError, PortalApi } from "./api.js";
import { escapeXml, renderChartSvg } from "./chart.js";
import {
  addDecision,
  addNetworkFailure,
  addUserMessage,
  newThread,
} from "./chat.js";
import type { ChatMessage, ChatThread } from "./chat.js";
import { applyEvent, attenuationEnabled, isTerminal, newLiveView } from "./live.js";
import type { LiveView } from "./live.js";
import type { StatusEvent, Verdict } from "./types.js";

const api = new PortalApi("..");  // portal is mounted at /portal/
const app = document.getElementById("app") as HTMLElement;

let thread: ChatThread = newThread();

// -- chat view ---------------------------------------------------------------

function cardHtml(message: ChatMessage): string {
  const card = message.card;
  if (!card) return "";
  if (card.kind === "approved") {
    const links = card.experimentIds
      .map((id) => `<a href="#/live/${id}" class="exp-link">${id}</a>`)
      .join(" ");
    return `<div class="card approved" data-kind="approved">experiments: ${links}</div>`;
  }
  if (card.kind === "clarification_required") {
    const questions = card.questions
      .map((q) => `<li>${escapeXml(q.question)}</li>`)
      .join("");
    return (
      `<div class="card clarification" data-kind="clarification_required" data-token="${card.token}">` +
      `<ul>${questions}</ul>` +
      `<form class="clarify-form"><input name="answer" placeholder="answer..." />` +
      `<button type="submit">answer</button></form></div>`
    );
  }
  return `<div class="card denied" data-kind="denied">${escapeXml(card.reason ?? "")}</div>`;
}

function renderChat(): void {
  const messages = thread.messages
    .map((m) => {
      const retry = m.retryable ? " retryable" : "";
      return (
        `<div class="message ${m.author}${retry}"><span class="author">${m.author}</span>` +
        `<span class="text">${escapeXml(m.text)}</span>${cardHtml(m)}</div>`
      );
    })
    .join("");
  app.innerHTML = `
    <section class="chat">
      <div class="messages">${messages || '<p class="hint">describe an experiment, e.g. "Deploy iperf3 across three 5G cores (Open5GS, Free5GC, OAI-CN) and verify mean throughput exceeds 50 Mbps"</p>'}</div>
      <form id="intent-form">
        <input id="intent-text" placeholder="describe your experiment..." autocomplete="off" />
        <button type="submit">send</button>
      </form>
    </section>`;
  const form = document.getElementById("intent-form") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = document.getElementById("intent-text") as HTMLInputElement;
    const text = input.value.trim();
    if (text) void submitIntent(text);
    input.value = "";
  });
  for (const clarifyForm of app.querySelectorAll<HTMLFormElement>(".clarify-form")) {
    clarifyForm.addEventListener("submit", (event) => {
      event.preventDefault();
      const container = clarifyForm.closest(".card") as HTMLElement;
      const token = container.dataset.token ?? "";
      const input = clarifyForm.querySelector("input") as HTMLInputElement;
      if (input.value.trim()) void answerClarification(token, input.value.trim());
    });
  }
  const list = app.querySelector(".messages");
  if (list) list.scrollTop = list.scrollHeight;
}

async function submitIntent(text: string): Promise<void> {
  thread = addUserMessage(thread, text);
  renderChat();
  try {
    thread = addDecision(thread, await api.submit(text));
  } catch (error) {
    thread = addNetworkFailure(thread, describe(error));
  }
  renderChat();
}

async function answerClarification(token: string, answer: string): Promise<void> {
  thread = addUserMessage(thread, answer);
  renderChat();
  try {
    thread = addDecision(thread, await api.clarify(token, answer));
  } catch (error) {
    thread = addNetworkFailure(thread, describe(error));
  }
  renderChat();
}

function describe(error: unknown): string {
  if (error instanceof ApiError) return `${error.status}: ${error.message}`;
  return error instanceof Error ? error.message : String(error);
}

// -- experiments list ----------------------------------------------------------

async function renderExperiments(): Promise<void> {
  app.innerHTML = `
    <section class="experiments">
      <form id="filter-form">
        <input name="core_name" placeholder="core (e.g. Free5GC)" />
        <select name="state">
          <option value="">any state</option>
          <option>completed</option><option>failed</option><option>cancelled</option>
          <option>running</option><option>queued</option>
        </select>
        <select name="modality">
          <option value="">any modality</option>
          <option>emulation</option><option>in-lab</option>
        </select>
        <button type="submit">search</button>
      </form>
      <div id="experiment-rows"><p class="hint">loading...</p></div>
    </section>`;
  const form = document.getElementById("filter-form") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    void loadRows();
  });

  async function loadRows(): Promise<void> {
    const data = new FormData(form);
    const filters: Record<string, string | undefined> = {
      core_name: (data.get("core_name") as string) || undefined,
      state: (data.get("state") as string) || undefined,
      modality: (data.get("modality") as string) || undefined,
    };
    const rows = document.getElementById("experiment-rows") as HTMLElement;
    try {
      const entries = await api.list(filters);
      if (!entries.length) {
        rows.innerHTML = '<p class="hint">no experiments match</p>';
        return;
      }
      rows.innerHTML =
        `<table><tr><th>experiment</th><th>state</th><th>cores</th><th>submitted</th></tr>` +
        entries
          .map(
            (e) =>
              `<tr><td><a href="#/live/${e.experiment_id}">${e.experiment_id}</a></td>` +
              `<td><span class="badge ${e.state}">${e.state}</span></td>` +
              `<td>${(e.target_cores ?? []).join(", ")}</td>` +
              `<td>${e.submitted_at ?? ""}</td></tr>`,
          )
          .join("") +
        `</table>`;
    } catch (error) {
      rows.innerHTML = `<p class="error">${escapeXml(describe(error))}</p>`;
    }
  }

  await loadRows();
}

// -- live view -------------------------------------------------------------------

let activeStream: EventSource | null = null;

function verdictHtml(verdict: Verdict | null): string {
  if (!verdict) return '<p class="hint">verdict pending</p>';
  const rows = Object.entries(verdict.per_run)
    .map(([run, result]) =>
      `<tr><td>${escapeXml(run)}</td><td>${result.observed.toFixed(2)}</td>` +
      `<td class="${result.pass ? "pass" : "fail"}">${result.pass ? "pass" : "fail"}</td></tr>`)
    .join("");
  const overall = verdict.overall_pass ? "pass" : "fail";
  const partial = verdict.partial ? " (partial)" : "";
  return (
    `<table class="verdict"><tr><th>run</th><th>observed</th><th>result</th></tr>${rows}</table>` +
    `<p class="overall ${overall}">overall: ${overall}${partial}</p>`
  );
}

function renderLive(view: LiveView): void {
  const enabled = attenuationEnabled(view);
  const chart = view.series.size
    ? renderChartSvg(view.series)
    : '<p class="hint">waiting for samples...</p>';
  app.innerHTML = `
    <section class="live">
      <h2>${view.experimentId}
        <span class="badge ${view.state}" id="state-badge">${view.state}</span>
      </h2>
      <div id="chart">${chart}</div>
      <div class="controls">
        <label class="${enabled ? "" : "disabled"}">
          attenuation <span id="att-value">${view.attenuationDb.toFixed(0)}</span> dB
          <input type="range" id="att-slider" min="0" max="120" step="1"
                 value="${view.attenuationDb}" ${enabled ? "" : "disabled"} />
        </label>
        <span id="att-notice" class="hint"></span>
        <a href="${api.metricsUrl(view.experimentId)}" target="_blank">download metrics</a>
        <button id="cancel-btn" ${isTerminal(view) ? "disabled" : ""}>cancel</button>
      </div>
      <div id="verdict">${verdictHtml(view.verdict)}</div>
    </section>`;

  const slider = document.getElementById("att-slider") as HTMLInputElement;
  slider.addEventListener("change", () => {
    void api
      .setAttenuation(view.experimentId, Number(slider.value))
      .catch((error: unknown) => {
        const notice = document.getElementById("att-notice");
        if (notice) {
          notice.textContent =
            error instanceof ApiError && error.status === 409
              ? "steering unavailable in this state"
              : describe(error);
        }
      });
  });
  const cancelBtn = document.getElementById("cancel-btn") as HTMLButtonElement;
  cancelBtn.addEventListener("click", () => {
    void api.cancel(view.experimentId).catch(() => undefined);
  });
}

async function followExperiment(experimentId: string): Promise<void> {
  if (activeStream) {
    activeStream.close();
    activeStream = null;
  }
  let driverKind = "";
  try {
    const status = await api.status(experimentId);
    driverKind = status.driver_kind ?? "";
  } catch (error) {
    if (error instanceof ApiError && error.status === 404) {
      app.innerHTML = `<section class="live"><p class="error">experiment ${escapeXml(experimentId)} not found</p></section>`;
      return;
    }
  }
  const view = newLiveView(experimentId, driverKind);
  renderLive(view);

  // EventSource replays history on (re)connect; dedupe keeps the chart exact.
  const stream = new EventSource(api.eventsUrl(experimentId));
  activeStream = stream;
  let repaintQueued = false;
  const repaint = () => {
    if (repaintQueued) return;
    repaintQueued = true;
    requestAnimationFrame(() => {
      repaintQueued = false;
      if (activeStream === stream) renderLive(view);
    });
  };
  for (const kind of ["state", "sample", "attenuation"]) {
    stream.addEventListener(kind, (event) => {
      const payload: StatusEvent = {
        event: kind,
        data: JSON.parse((event as MessageEvent).data),
      };
      applyEvent(view, payload);
      if (isTerminal(view)) stream.close();
      repaint();
    });
  }
  stream.addEventListener("error", (event) => {
    if ((event as MessageEvent).data) {
      app.innerHTML = `<section class="live"><p class="error">experiment ${escapeXml(experimentId)} not found</p></section>`;
      stream.close();
    }
    // otherwise: transient drop; EventSource reconnects on its own
  });
}

// -- router ------------------------------------------------------------------------

function setActiveNav(hash: string): void {
  for (const link of document.querySelectorAll("nav a")) {
    link.classList.toggle("active", link.getAttribute("href") === hash);
  }
}

function route(): void {
  if (activeStream) {
    activeStream.close();
    activeStream = null;
  }
  const hash = window.location.hash || "#/";
  if (hash.startsWith("#/live/")) {
    void followExperiment(hash.slice("#/live/".length));
  } else if (hash === "#/experiments") {
    setActiveNav(hash);
    void renderExperiments();
  } else {
    setActiveNav("#/");
    renderChat();
  }
}

window.addEventListener("hashchange", route);
route();
