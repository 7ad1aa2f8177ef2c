// Conversation and message state fed by REST history plus socket events.
// Delivery is at-least-once, so events are deduplicated by message id.

import type { ChatMessage, ConversationSummary, SocketEvent } from './types.js';

export class ChatStore {
  conversations: ConversationSummary[] = [];
  private messagesByConv = new Map<string, ChatMessage[]>();
  private seen = new Set<string>();
  private listeners: Array<() => void> = [];

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  setConversations(list: ConversationSummary[]): void {
    this.conversations = list;
    this.emit();
  }

  /** History arrives newest-first; stored oldest-first for rendering. */
  setHistory(conversationId: string, newestFirst: ChatMessage[]): void {
    const ordered = [...newestFirst].reverse();
    this.messagesByConv.set(conversationId, ordered);
    for (const m of ordered) this.seen.add(m.messageId);
    this.emit();
  }

  messages(conversationId: string): ChatMessage[] {
    return this.messagesByConv.get(conversationId) ?? [];
  }

  applyEvent(ev: SocketEvent): boolean {
    if (ev.type !== 'message') return false;
    const msg = ev.payload;
    if (this.seen.has(msg.messageId)) return false;
    this.seen.add(msg.messageId);
    const list = this.messagesByConv.get(msg.conversationId) ?? [];
    list.push(msg);
    list.sort((a, b) => a.sentAt - b.sentAt);
    this.messagesByConv.set(msg.conversationId, list);
    this.touchConversation(msg);
    this.emit();
    return true;
  }

  appendLocal(msg: ChatMessage): void {
    this.applyEvent({ type: 'message', payload: msg });
  }

  private touchConversation(msg: ChatMessage): void {
    const conv = this.conversations.find(
      (c) => c.conversationId === msg.conversationId,
    );
    if (conv) {
      conv.preview = msg.kind === 'text' ? msg.body : '[image]';
      conv.lastActivity = msg.sentAt;
      this.conversations.sort((a, b) => b.lastActivity - a.lastActivity);
    }
  }
}
