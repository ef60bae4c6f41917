// Chat thread state: user/system messages with decision cards. Pure
// functions so the dialogue flow is testable without a DOM.

import type { DecisionKind, Question, SubmitResponse } from "./types.js";

export interface DecisionCard {
  kind: DecisionKind;
  experimentIds: string[];
  token: string | null;
  questions: Question[];
  reason: string | null;
}

export interface ChatMessage {
  author: "user" | "system";
  text: string;
  card?: DecisionCard;
  retryable?: boolean;
}

export interface ChatThread {
  messages: ChatMessage[];
  pendingToken: string | null;
}

export function newThread(): ChatThread {
  return { messages: [], pendingToken: null };
}

export function addUserMessage(thread: ChatThread, text: string): ChatThread {
  return { ...thread, messages: [...thread.messages, { author: "user", text }] };
}

function cardFor(response: SubmitResponse): DecisionCard {
  return {
    kind: response.decision,
    experimentIds: response.experiment_ids ?? [],
    token: response.clarification_token ?? null,
    questions: response.questions ?? [],
    reason: response.reason ?? null,
  };
}

function summaryFor(card: DecisionCard): string {
  switch (card.kind) {
    case "approved":
      return `approved: ${card.experimentIds.length} experiment(s) launched`;
    case "clarification_required":
      return "clarification required";
    case "denied":
      return `denied: ${card.reason ?? "no reason given"}`;
  }
}

// At most one clarification may be pending per thread: an approved or
// denied outcome clears it, a new clarification replaces it.
export function addDecision(thread: ChatThread, response: SubmitResponse): ChatThread {
  const card = cardFor(response);
  const pendingToken = card.kind === "clarification_required" ? card.token : null;
  return {
    pendingToken,
    messages: [
      ...thread.messages,
      { author: "system", text: summaryFor(card), card },
    ],
  };
}

// Network failures leave the thread intact and are marked retryable.
export function addNetworkFailure(thread: ChatThread, detail: string): ChatThread {
  return {
    ...thread,
    messages: [
      ...thread.messages,
      { author: "system", text: `request failed: ${detail} (retry when the service is back)`,
        retryable: true },
    ],
  };
}
