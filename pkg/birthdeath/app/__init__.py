"""birthdeath application package"""
