// Chat view state and the controller driving it. Framework-free so the
// contract tests can exercise the full send/trace flow without a DOM; the
// DOM layer in main.ts just re-renders on every state change.

import { ApiClient, ApiError } from "./api.js";
import type { TurnTrace } from "./types.js";

export type ConnectionStatus = "disconnected" | "connecting" | "connected" | "error";

export interface ChatMessage {
  role: "user" | "assistant";
  text: string;
  turnId: number | null;
}

export interface ChatViewState {
  sessionId: string | null;
  status: ConnectionStatus;
  messages: ChatMessage[];
  sending: boolean;
  // transient inline notice, e.g. when the agent is still busy
  notice: string | null;
  // last failed message text, offered for retry
  failedText: string | null;
  error: string | null;
  selectedTurnId: number | null;
  selectedTrace: TurnTrace | null;
  traceLoading: boolean;
}

export const AGENT_BUSY_NOTICE = "agent is thinking - wait for the current reply";

export class ChatController {
  readonly state: ChatViewState = {
    sessionId: null,
    status: "disconnected",
    messages: [],
    sending: false,
    notice: null,
    failedText: null,
    error: null,
    selectedTurnId: null,
    selectedTrace: null,
    traceLoading: false,
  };

  private listeners: Array<(state: ChatViewState) => void> = [];
  private traceCache = new Map<number, TurnTrace>();

  constructor(private readonly api: ApiClient) {}

  subscribe(listener: (state: ChatViewState) => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener(this.state);
  }

  /** Send is enabled only with a live session, non-empty input, and no
   * request already in flight (one active request per session). */
  canSend(text: string): boolean {
    return (
      this.state.status === "connected" &&
      !this.state.sending &&
      text.trim().length > 0
    );
  }

  async connect(): Promise<void> {
    this.state.status = "connecting";
    this.emit();
    try {
      this.state.sessionId = await this.api.createSession();
      this.state.status = "connected";
      this.state.error = null;
    } catch (err) {
      this.state.status = "error";
      this.state.error = err instanceof Error ? err.message : String(err);
    }
    this.emit();
  }

  async send(text: string): Promise<void> {
    const trimmed = text.trim();
    if (!this.canSend(trimmed) || this.state.sessionId === null) return;
    this.state.sending = true;
    this.state.notice = null;
    this.state.error = null;
    this.state.failedText = null;
    this.state.messages.push({ role: "user", text: trimmed, turnId: null });
    this.emit();
    try {
      const reply = await this.api.sendMessage(this.state.sessionId, trimmed);
      const userMessage = this.state.messages[this.state.messages.length - 1];
      if (userMessage) userMessage.turnId = reply.turn_id;
      this.state.messages.push({
        role: "assistant",
        text: reply.reply,
        turnId: reply.turn_id,
      });
    } catch (err) {
      // the message was not processed; drop the optimistic bubble
      this.state.messages.pop();
      if (err instanceof ApiError && err.isConflict) {
        this.state.notice = AGENT_BUSY_NOTICE;
      } else {
        this.state.error = err instanceof Error ? err.message : String(err);
        this.state.failedText = trimmed;
      }
    } finally {
      this.state.sending = false;
      this.emit();
    }
  }

  /** Retry affordance after a network error: resend the failed text. */
  async retry(): Promise<void> {
    const text = this.state.failedText;
    if (text === null) return;
    this.state.failedText = null;
    await this.send(text);
  }

  /** Trace is fetched lazily the first time a turn's pane is opened. */
  async openTrace(turnId: number): Promise<void> {
    this.state.selectedTurnId = turnId;
    const cached = this.traceCache.get(turnId);
    if (cached) {
      this.state.selectedTrace = cached;
      this.emit();
      return;
    }
    if (this.state.sessionId === null) return;
    this.state.traceLoading = true;
    this.state.selectedTrace = null;
    this.emit();
    try {
      const trace = await this.api.fetchTrace(this.state.sessionId, turnId);
      this.traceCache.set(turnId, trace);
      // a slower response for a stale selection must not clobber the pane
      if (this.state.selectedTurnId === turnId) {
        this.state.selectedTrace = trace;
      }
    } catch (err) {
      this.state.error = err instanceof Error ? err.message : String(err);
    } finally {
      this.state.traceLoading = false;
      this.emit();
    }
  }

  closeTrace(): void {
    this.state.selectedTurnId = null;
    this.state.selectedTrace = null;
    this.emit();
  }
}
