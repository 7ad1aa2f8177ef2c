// Wire contracts of the validation gateway.

export interface ValidateResponse {
  isValid: boolean;
  prediction: 'original' | 'recaptured' | null;
  confidence: number | null;
  probabilities: { original: number; recaptured: number } | null;
  reason: string;
  permitToken: string | null;
  modelVersion: string;
}

export interface UploadResponse {
  imageUrl: string;
}

export interface ChatMessage {
  messageId: string;
  conversationId: string;
  senderId: string;
  kind: 'text' | 'image';
  body: string | null;
  imageUrl: string | null;
  sentAt: number;
}

export interface ConversationSummary {
  conversationId: string;
  members: string[];
  preview: string | null;
  lastActivity: number;
}

export interface MessagesPage {
  messages: ChatMessage[];
  nextCursor: number | null;
}

export interface LoginResponse {
  token: string;
  userId: number;
  username: string;
}

export interface SocketEvent {
  type: string;
  payload: ChatMessage;
}
